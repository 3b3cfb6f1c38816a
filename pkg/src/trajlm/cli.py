"""Command-line front end: one subcommand per pipeline stage.

Shared behavior across subcommands:

* ``--config FILE`` supplies parameter values from a JSON object keyed by
  flag name; explicit flags beat the file, the file beats built-in defaults.
* ``--seed`` drives every random choice a subcommand makes.
* ``--json`` switches the stdout summary to a single JSON object.
* Runs that write artifacts drop a resolved-config snapshot next to them,
  so any output can be reproduced from the snapshot alone.
* Failures exit 2 (bad flags/config), 3 (unreadable or inconsistent data)
  or 4 (numeric trouble), print a JSON error object to stderr, and remove
  whatever artifacts the failed run had created.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from .baselines import (
    BaselineError,
    fit_ar,
    fit_markov,
    save_ar,
    save_markov,
    select_order_aic,
)
from .codec import (
    CodecError,
    GeoPoint,
    GridCode,
    TrajectoryAlphabet,
    decode_center,
    encode_cell,
)
from .corpus import (
    MIN_INTERVAL_MINUTES,
    CorpusError,
    build_corpus,
    ingest,
    parse,
    read_day_records,
)
from .evaluation import (
    EmpiricalCdf,
    EvaluationError,
    format_hit_rate_tables,
    format_male_table,
    hit_rate,
    hourly_distance_cdf,
    ks_distance,
    make_prompt,
    male,
    write_cdf_csv,
    write_hit_rate_csv,
    write_male_csv,
)
from .experiments import generate_lines
from .grammar_mask import GrammarStateError
from .model import (
    CATEGORIES,
    CheckpointError,
    Model,
    ModelConfig,
    ModelError,
    TrainConfig,
    attention_profile,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .synthgen import GeneratorConfig, SynthError, generate_corpus
from .tokenizer import BpeTokenizer, TokenizerError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_REQUIRED = object()  # sentinel default: flag or config file must supply it


class CliError(Exception):
    """Bad flags or config-file contents."""


_NUMERIC_ERRORS = (
    ModelError,
    FloatingPointError,
    OverflowError,
    ZeroDivisionError,
    np.linalg.LinAlgError,
)
_DATA_ERRORS = (
    CorpusError,
    TokenizerError,
    CodecError,
    CheckpointError,
    BaselineError,
    EvaluationError,
    GrammarStateError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    PermissionError,
    UnicodeDecodeError,
)


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, (CliError, SynthError)):
        return EXIT_CONFIG
    if isinstance(exc, _NUMERIC_ERRORS):
        return EXIT_NUMERIC
    if isinstance(exc, _DATA_ERRORS):
        return EXIT_DATA
    if isinstance(exc, ValueError):  # constructor validation of parameters
        return EXIT_CONFIG
    return 1


class _Run:
    """Tracks artifacts so a failed run can remove what it created."""

    def __init__(self) -> None:
        self._tracked: list[tuple[Path, bool]] = []

    def track(self, path: str | Path) -> Path:
        p = Path(path)
        self._tracked.append((p, p.exists()))
        return p

    def discard_new(self) -> None:
        for p, existed in reversed(self._tracked):
            if existed or not p.exists():
                continue
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            else:
                p.unlink()


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits with usage text
        raise CliError(message)


# ---- parameter plumbing -------------------------------------------------------

_DEFAULTS: dict[str, dict] = {
    "synth": {
        "out": _REQUIRED, "agents": 100, "days": 7,
        "start_date": "2021-04-05", "seed": 0,
    },
    "ingest": {"pings": _REQUIRED, "out": None, "seed": 0},
    "encode": {"lat": _REQUIRED, "lon": _REQUIRED, "level": 5, "seed": 0},
    "decode": {"mesh": _REQUIRED, "seed": 0},
    "build-corpus": {
        "pings": _REQUIRED, "env": None, "out": _REQUIRED, "plain": False,
        "level": 5, "min_gap": MIN_INTERVAL_MINUTES, "home_radius": 100.0,
        "seed": 0,
    },
    "train-bpe": {"corpus": _REQUIRED, "out": _REQUIRED, "vocab_size": 512, "seed": 0},
    "train": {
        "corpus": _REQUIRED, "vocab": _REQUIRED, "out": _REQUIRED,
        "d_model": 96, "layers": 3, "heads": 4, "context": 128,
        "dropout": 0.1, "steps": 1300, "batch_size": 48, "lr": 1e-3,
        "warmup": 100, "seed": 0,
    },
    "generate": {
        "checkpoint": _REQUIRED, "vocab": _REQUIRED, "alphabet": _REQUIRED,
        "lines": _REQUIRED, "out": _REQUIRED, "temperature": 1.0,
        "top_k": 0, "max_lines": 0, "seed": 0,
    },
    "fit-markov": {"days": _REQUIRED, "out": _REQUIRED, "order": 1, "seed": 0},
    "fit-ar": {"days": _REQUIRED, "out": _REQUIRED, "p": 0, "p_max": 10, "seed": 0},
    "evaluate": {
        "generated": _REQUIRED, "truth": _REQUIRED, "alphabet": _REQUIRED,
        "out": _REQUIRED, "name": "model", "seed": 0,
    },
    "attention": {
        "checkpoint": _REQUIRED, "vocab": _REQUIRED, "lines": _REQUIRED,
        "out": _REQUIRED, "max_lines": 200, "seed": 0,
    },
}


def _load_config_file(path: str) -> dict:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError(f"{path}: config must be a JSON object")
    return {str(k).replace("-", "_"): v for k, v in doc.items()}


def _merge_params(cmd: str, args: argparse.Namespace) -> dict:
    """Explicit flags > config file > built-in defaults."""
    defaults = _DEFAULTS[cmd]
    file_values = _load_config_file(args.config) if args.config else {}
    unknown = sorted(set(file_values) - set(defaults))
    if unknown:
        raise CliError(f"unknown config keys for {cmd}: {', '.join(unknown)}")
    params = {}
    for dest, default in defaults.items():
        value = getattr(args, dest)
        if value is None:
            value = file_values.get(dest, default)
        params[dest] = value
    missing = sorted(k for k, v in params.items() if v is _REQUIRED)
    if missing:
        raise CliError(f"{cmd} needs: {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return params


def _snapshot(run: _Run, cmd: str, params: dict, target: Path, is_dir: bool) -> None:
    """Resolved-config record next to the outputs; reruns rewrite it byte-for-byte."""
    if is_dir:
        path = target / f"{cmd}.config.json"
    else:
        path = target.with_name(target.stem + ".config.json")
    run.track(path)
    doc = {"subcommand": cmd, "params": params}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_lines(path: str | Path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def _kv(summary: dict) -> str:
    return "\n".join(f"{k}: {v}" for k, v in summary.items())


# ---- subcommands --------------------------------------------------------------


def _cmd_synth(params: dict, run: _Run):
    config = GeneratorConfig(
        n_agents=params["agents"], n_days=params["days"],
        start_date=params["start_date"],
    )
    out = run.track(params["out"])
    for name in ("pings.csv", "environment.csv", "world.json"):
        run.track(out / name)
    out.mkdir(parents=True, exist_ok=True)
    _snapshot(run, "synth", params, out, is_dir=True)
    generate_corpus(config, out, params["seed"])
    with open(out / "pings.csv", encoding="utf-8") as fh:
        rows = sum(1 for _ in fh) - 1
    summary = {
        "out": str(out), "agents": params["agents"], "days": params["days"],
        "ping_rows": rows,
    }
    return summary, _kv(summary)


def _cmd_ingest(params: dict, run: _Run):
    _, _, stats = ingest(params["pings"])
    summary = {
        "devices": stats.devices,
        "rows_total": stats.rows_total,
        "rows_malformed": stats.rows_malformed,
        "rows_deduped": stats.rows_deduped,
    }
    if params["out"]:
        out = run.track(params["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        _snapshot(run, "ingest", params, out, is_dir=False)
        out.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        summary["out"] = str(out)
    return summary, _kv(summary)


def _mesh_string(code: GridCode) -> str:
    parts: list[int] = []
    for level in range(1, code.level + 1):
        parts.extend(code.level_key(level))
    return "-".join(str(i) for i in parts)


_MESH_LEVELS = {2: 1, 4: 2, 6: 3, 7: 4, 8: 5}  # component count -> level


def _cmd_encode(params: dict, run: _Run):
    try:
        code = encode_cell(GeoPoint(params["lat"], params["lon"]), params["level"])
    except CodecError as exc:  # flag values, not data, are at fault here
        raise CliError(str(exc)) from exc
    mesh = _mesh_string(code)
    summary = {"mesh": mesh, "lat": params["lat"], "lon": params["lon"],
               "level": params["level"]}
    return summary, mesh


def _cmd_decode(params: dict, run: _Run):
    text = params["mesh"]
    try:
        parts = [int(x) for x in text.split("-")]
    except ValueError as exc:
        raise CliError(f"mesh indices must be integers: {text!r}") from exc
    level = _MESH_LEVELS.get(len(parts))
    if level is None:
        raise CliError(f"{text!r} has {len(parts)} components; expected one of "
                       f"{sorted(_MESH_LEVELS)}")
    names = ("p", "u", "q", "v", "e", "f", "q4", "q5")
    try:
        code = GridCode(level=level, **dict(zip(names, parts)))
        point = decode_center(code)
    except CodecError as exc:
        raise CliError(str(exc)) from exc
    summary = {"lat": point.lat, "lon": point.lon, "level": level, "mesh": text}
    return summary, f"{point.lat:.6f} {point.lon:.6f}"


def _cmd_build_corpus(params: dict, run: _Run):
    conditioning = bool(params["env"]) and not params["plain"]
    out = run.track(params["out"])
    for name in ("alphabet.tsv", "split.txt", "summary.json", "corpus_train.txt",
                 "corpus_test.txt", "days_train.jsonl", "days_test.jsonl"):
        run.track(out / name)
    out.mkdir(parents=True, exist_ok=True)
    _snapshot(run, "build-corpus", params, out, is_dir=True)
    result = build_corpus(
        params["pings"], params["env"], out, params["seed"],
        conditioning=conditioning, level=params["level"],
        min_gap=params["min_gap"], home_radius_m=params["home_radius"],
    )
    summary = {
        "out": str(out), "devices": result.n_devices,
        "devices_no_night": result.n_dropped_no_night,
        "train_lines": result.n_train_lines, "test_lines": result.n_test_lines,
        "conditioning": conditioning,
    }
    return summary, _kv(summary)


def _cmd_train_bpe(params: dict, run: _Run):
    lines = _read_lines(params["corpus"])
    if not lines:
        raise CorpusError(f"{params['corpus']}: no lines to train on")
    tokenizer = BpeTokenizer.train(lines, params["vocab_size"])
    out = run.track(params["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _snapshot(run, "train-bpe", params, out, is_dir=False)
    tokenizer.save(out)
    summary = {"out": str(out), "vocab_size": tokenizer.vocab_size,
               "lines": len(lines)}
    return summary, _kv(summary)


def _cmd_train(params: dict, run: _Run):
    tokenizer = BpeTokenizer.load(params["vocab"])
    lines = _read_lines(params["corpus"])
    if not lines:
        raise CorpusError(f"{params['corpus']}: no lines to train on")
    sequences = [tokenizer.tokenize(line) for line in lines]
    model = Model(ModelConfig(
        vocab_size=tokenizer.vocab_size, n_layers=params["layers"],
        n_heads=params["heads"], d_model=params["d_model"],
        context_length=params["context"], dropout=params["dropout"],
        seed=params["seed"],
    ))
    result = train(model, sequences, TrainConfig(
        steps=params["steps"], batch_size=params["batch_size"], lr=params["lr"],
        warmup_steps=params["warmup"], seed=params["seed"],
    ))
    final_loss = float(np.mean(result.losses[-20:]))
    out = run.track(params["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _snapshot(run, "train", params, out, is_dir=False)
    save_checkpoint(out, model, step=params["steps"],
                    extra_meta={"final_loss": final_loss})
    summary = {
        "out": str(out), "lines": len(lines),
        "tokens": sum(len(s) for s in sequences),
        "steps": params["steps"], "final_loss": round(final_loss, 4),
    }
    return summary, _kv(summary)


def _cmd_generate(params: dict, run: _Run):
    model, _, _ = load_checkpoint(params["checkpoint"])
    tokenizer = BpeTokenizer.load(params["vocab"])
    alphabet = TrajectoryAlphabet.load(params["alphabet"])
    lines = _read_lines(params["lines"])
    context = model.config.context_length
    indices = []
    for i, line in enumerate(lines):
        if params["max_lines"] and len(indices) >= params["max_lines"]:
            break
        prompt = make_prompt(line)
        if prompt is None:
            continue
        try:
            ids = tokenizer.tokenize(prompt)
        except TokenizerError:
            continue  # line visits cells the vocabulary never saw
        if len(ids) < context:
            indices.append(i)
    texts = generate_lines(
        model, tokenizer, alphabet, lines, indices,
        temperature=params["temperature"], top_k=params["top_k"],
        seed=params["seed"],
    )
    out = run.track(params["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _snapshot(run, "generate", params, out, is_dir=False)
    out.write_text("\n".join(texts.get(i, "") for i in range(len(lines))) + "\n",
                   encoding="utf-8")
    summary = {
        "out": str(out), "lines": len(lines), "eligible": len(indices),
        "generated": len(texts),
    }
    return summary, _kv(summary)


def _cmd_fit_markov(params: dict, run: _Run):
    days = [day for day, _, _ in read_day_records(params["days"])]
    model = fit_markov(days, params["order"])
    out = run.track(params["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _snapshot(run, "fit-markov", params, out, is_dir=False)
    save_markov(model, out)
    summary = {"out": str(out), "order": model.order, "days": len(days),
               "conditions": len(model.counts)}
    return summary, _kv(summary)


def _cmd_fit_ar(params: dict, run: _Run):
    days = [day for day, _, _ in read_day_records(params["days"])]
    series = [[float(g) for g in day.gaps()] for day in days]
    order = params["p"] or select_order_aic(series, params["p_max"])
    model = fit_ar(series, order)
    out = run.track(params["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _snapshot(run, "fit-ar", params, out, is_dir=False)
    save_ar(model, out)
    summary = {
        "out": str(out), "p": model.p, "days": len(days),
        "aic_selected": params["p"] == 0,
        "phi": [round(float(x), 4) for x in model.phi],
    }
    return summary, _kv(summary)


def _cmd_evaluate(params: dict, run: _Run):
    alphabet = TrajectoryAlphabet.load(params["alphabet"])
    truth_lines = _read_lines(params["truth"])
    generated_lines = _read_lines(params["generated"])
    if len(truth_lines) != len(generated_lines):
        raise EvaluationError(
            f"{len(generated_lines)} generated lines vs {len(truth_lines)} truth lines"
        )
    if not truth_lines:
        raise EvaluationError("empty truth file")
    truth_days = [parse(line, alphabet)[2] for line in truth_lines]
    generated_days = [parse(line, alphabet)[2] if line else None
                      for line in generated_lines]

    if all(day is None for day in generated_days):
        raise EvaluationError("every generated row is blank; nothing to score")
    name = params["name"]
    rates = hit_rate(generated_days, truth_days, alphabet)
    gen_gaps, true_gaps = [], []
    for gen, true in zip(generated_days, truth_days):
        if gen is None:
            continue
        gen_gaps.append([float(g) for g in gen.gaps()[3:]])
        true_gaps.append([float(g) for g in true.gaps()[3:]])
    male_table = male(gen_gaps, true_gaps)

    kept_days = [d for d in generated_days if d is not None]
    interval_cdfs = {
        "truth": EmpiricalCdf.of([g for gaps in true_gaps for g in gaps]),
        name: EmpiricalCdf.of([g for gaps in gen_gaps for g in gaps]),
    }
    distance_cdfs = {
        "truth": hourly_distance_cdf(truth_days, alphabet),
        name: hourly_distance_cdf(kept_days, alphabet),
    }
    ks_interval = ks_distance(interval_cdfs[name], interval_cdfs["truth"])

    out = run.track(params["out"])
    for artifact in ("hit_rate.csv", "male.csv", "interval_cdf.csv",
                     "hourly_distance_cdf.csv", "tables.txt"):
        run.track(out / artifact)
    out.mkdir(parents=True, exist_ok=True)
    _snapshot(run, "evaluate", params, out, is_dir=True)
    write_hit_rate_csv(out / "hit_rate.csv", {name: rates})
    write_male_csv(out / "male.csv", {name: male_table})
    write_cdf_csv(out / "interval_cdf.csv", interval_cdfs)
    write_cdf_csv(out / "hourly_distance_cdf.csv", distance_cdfs)
    tables = (format_hit_rate_tables({name: rates}) + "\n\n"
              + format_male_table({name: male_table}) + "\n")
    (out / "tables.txt").write_text(tables, encoding="utf-8")

    summary = {
        "out": str(out), "evaluated": rates.evaluated, "excluded": rates.excluded,
        "hit_rate_final_3km": round(rates.rates[("final", 3.0)], 4),
        "male_next": round(male_table.values[1], 4),
        "ks_interval": round(ks_interval, 4),
    }
    return summary, tables + "\n" + _kv(summary)


def _cmd_attention(params: dict, run: _Run):
    model, _, _ = load_checkpoint(params["checkpoint"])
    tokenizer = BpeTokenizer.load(params["vocab"])
    lines = []
    skipped = 0
    for line in _read_lines(params["lines"]):
        if params["max_lines"] and len(lines) >= params["max_lines"]:
            break
        try:
            tokenizer.tokenize(line)
        except TokenizerError:
            skipped += 1
            continue
        lines.append(line)
    location, interval = attention_profile(model, tokenizer, lines)
    out = run.track(params["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _snapshot(run, "attention", params, out, is_dir=False)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "layer", "category", "weight"])
        for profile in (location, interval):
            for layer_index, bucket in enumerate(profile.layers):
                for category in CATEGORIES:
                    writer.writerow([profile.kind, layer_index, category,
                                     f"{bucket.get(category, 0.0):.6f}"])
    summary = {
        "out": str(out), "layers": len(location.layers), "lines": len(lines),
        "skipped": skipped, "location_steps": location.steps,
        "interval_steps": interval.steps,
    }
    return summary, _kv(summary)


_HANDLERS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "build-corpus": _cmd_build_corpus,
    "train-bpe": _cmd_train_bpe,
    "train": _cmd_train,
    "generate": _cmd_generate,
    "fit-markov": _cmd_fit_markov,
    "fit-ar": _cmd_fit_ar,
    "evaluate": _cmd_evaluate,
    "attention": _cmd_attention,
}


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of parameter defaults")
    common.add_argument("--seed", type=int, help="seed for any randomness")
    common.add_argument("--json", action="store_true", help="JSON summary on stdout")

    parser = _Parser(prog="trajlm", description=__doc__.splitlines()[0])
    parser.set_defaults(cmd=None, json=False)
    sub = parser.add_subparsers(dest="cmd")

    def cmd(name: str, help_text: str) -> _Parser:
        p = sub.add_parser(name, parents=[common], help=help_text)
        return p

    p = cmd("synth", "emit a synthetic ping corpus with known dynamics")
    p.add_argument("--out", help="output directory")
    p.add_argument("--agents", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--start-date", help="first simulated date (YYYY-MM-DD)")

    p = cmd("ingest", "read a ping CSV and report stream statistics")
    p.add_argument("--pings", help="ping CSV file")
    p.add_argument("--out", help="optional summary JSON path")

    p = cmd("encode", "map a coordinate to recursive-grid mesh indices")
    p.add_argument("--lat", type=float)
    p.add_argument("--lon", type=float)
    p.add_argument("--level", type=int, help="grid level 1-5")

    p = cmd("decode", "map mesh indices back to the cell-center coordinate")
    p.add_argument("--mesh", help="dash-separated indices, e.g. 53-39-4-6-1-1")

    p = cmd("build-corpus", "segment pings into day lines and write a split corpus")
    p.add_argument("--pings", help="ping CSV file")
    p.add_argument("--env", help="per-date environment CSV")
    p.add_argument("--out", help="output directory")
    p.add_argument("--plain", action=argparse.BooleanOptionalAction,
                   help="skip conditioning prefixes even when --env is given")
    p.add_argument("--level", type=int, help="cell depth 1-5")
    p.add_argument("--min-gap", type=int, help="minimum stop gap in minutes")
    p.add_argument("--home-radius", type=float, help="privacy radius in meters")

    p = cmd("train-bpe", "learn a byte-pair vocabulary over corpus lines")
    p.add_argument("--corpus", help="line file to learn from")
    p.add_argument("--out", help="vocabulary file to write")
    p.add_argument("--vocab-size", type=int)

    p = cmd("train", "train the sequence model on a tokenized corpus")
    p.add_argument("--corpus", help="line file to train on")
    p.add_argument("--vocab", help="vocabulary file")
    p.add_argument("--out", help="checkpoint file to write")
    p.add_argument("--d-model", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--context", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup", type=int)

    p = cmd("generate", "continue each line's 4-stop prompt with sampled stops")
    p.add_argument("--checkpoint", help="trained model checkpoint")
    p.add_argument("--vocab", help="vocabulary file")
    p.add_argument("--alphabet", help="alphabet table from build-corpus")
    p.add_argument("--lines", help="file of full day lines to prompt from")
    p.add_argument("--out", help="output line file (blank row = no generation)")
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-k", type=int)
    p.add_argument("--max-lines", type=int, help="cap on prompted lines (0 = all)")

    p = cmd("fit-markov", "fit a fixed-grid Markov chain over day records")
    p.add_argument("--days", help="day-record JSONL file")
    p.add_argument("--out", help="model file to write")
    p.add_argument("--order", type=int, choices=(1, 2))

    p = cmd("fit-ar", "fit an autoregression on log interval minutes")
    p.add_argument("--days", help="day-record JSONL file")
    p.add_argument("--out", help="model file to write")
    p.add_argument("--p", type=int, help="lag order (0 = pick by AIC)")
    p.add_argument("--p-max", type=int, help="largest order AIC may consider")

    p = cmd("evaluate", "score generated lines against aligned truth lines")
    p.add_argument("--generated", help="generated line file (blank row = skipped)")
    p.add_argument("--truth", help="truth line file, same order")
    p.add_argument("--alphabet", help="alphabet table from build-corpus")
    p.add_argument("--out", help="output directory for tables and plot data")
    p.add_argument("--name", help="label for the generated series")

    p = cmd("attention", "profile attention weight by token category")
    p.add_argument("--checkpoint", help="trained model checkpoint")
    p.add_argument("--vocab", help="vocabulary file")
    p.add_argument("--lines", help="line file to profile over")
    p.add_argument("--out", help="CSV file to write")
    p.add_argument("--max-lines", type=int)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        return _fail(EXIT_CONFIG, exc)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.cmd is None:
        parser.print_help()
        return EXIT_OK
    run = _Run()
    try:
        params = _merge_params(args.cmd, args)
        summary, text = _HANDLERS[args.cmd](params, run)
    except Exception as exc:
        run.discard_new()
        return _fail(_exit_code(exc), exc)
    print(json.dumps(summary, sort_keys=True) if args.json else text)
    return EXIT_OK


def _fail(code: int, exc: Exception) -> int:
    doc = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

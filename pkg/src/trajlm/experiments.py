"""End-to-end experiment drivers.

run_pipeline: synthetic world -> ping ingestion -> tokenizer -> tiny
transformer -> Markov/AR baselines -> hit-rate, MALE, and interval-CDF
artifacts, all under one output directory and deterministic per config.

run_conditioning: trains a conditioned and an unconditioned model on the
same synthetic days and compares weekend next-location accuracy plus the
day-type attention profile.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (
    ARModel,
    GENERATION_STEPS,
    FIXED_GRID_MINUTES,
    HORIZON_MINUTES,
    MarkovModel,
    ar_generate,
    fit_ar,
    fit_markov,
    markov_generate,
    resample_fixed,
    save_ar,
    save_markov,
)
from .codec import TrajectoryAlphabet
from .corpus import (
    CorpusBuildResult,
    DayTrajectory,
    HomeFlag,
    Stop,
    build_corpus,
    parse,
    read_day_records,
)
from .evaluation import (
    EmpiricalCdf,
    HitRateTable,
    MaleTable,
    format_hit_rate_tables,
    format_male_table,
    hit_rate,
    ks_distance,
    make_prompt,
    male,
    write_cdf_csv,
    write_hit_rate_csv,
    write_male_csv,
)
from .grammar_mask import AFTER_CELL, GrammarMask
from .model import (
    Model,
    ModelConfig,
    TrainConfig,
    attention_profile,
    eval_loss,
    generate_batch,
    save_checkpoint,
    train,
)
from .synthgen import GeneratorConfig, generate_corpus
from .tokenizer import BpeTokenizer


class ExperimentError(Exception):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the table-replication experiment needs, in one place."""

    out_dir: str
    n_agents: int = 1000
    n_days: int = 31
    seed: int = 11
    conditioning: bool = True
    bpe_target: int = 512
    d_model: int = 96
    n_layers: int = 3
    n_heads: int = 4
    context_length: int = 128
    dropout: float = 0.1
    steps: int = 1300
    batch_size: int = 48
    lr: float = 1e-3
    warmup_steps: int = 100
    train_seed: int = 0
    eval_lines: int = 400
    eval_seed: int = 7
    temperature: float = 1.0
    gen_seed: int = 1
    ar_p: int = 3


@dataclass
class PipelineResult:
    config: PipelineConfig
    out_dir: Path
    corpus: CorpusBuildResult
    tokenizer: BpeTokenizer
    model: Model
    hit_rates: dict[str, HitRateTable]
    male_tables: dict[str, MaleTable]
    ks: dict[str, float]
    eval_indices: list[int]
    final_loss: float
    timings: dict[str, float] = field(default_factory=dict)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _resolved_config(config) -> dict:
    doc = asdict(config)
    doc["out_dir"] = "."  # keep reruns into different directories comparable
    return doc


def _promptable(line: str, tokenizer: BpeTokenizer) -> bool:
    prompt = make_prompt(line)
    if prompt is None:
        return False
    try:
        tokenizer.tokenize(prompt)  # test-only devices can visit unseen cells
    except Exception:
        return False
    return True


def eval_indices(
    lines: list[str], tokenizer: BpeTokenizer, k: int, seed: int
) -> list[int]:
    """Seeded subsample of test lines with four stops and a tokenizable prompt."""
    usable = [i for i, line in enumerate(lines) if _promptable(line, tokenizer)]
    if not usable:
        raise ExperimentError("no test line has the four stops a prompt needs")
    if len(usable) <= k:
        return usable
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(usable), size=k, replace=False)
    return sorted(usable[i] for i in picked)


def generate_lines(
    model: Model,
    tokenizer: BpeTokenizer,
    alphabet: TrajectoryAlphabet,
    lines: list[str],
    indices: list[int],
    temperature: float = 1.0,
    top_k: int = 0,
    seed: int = 1,
) -> dict[int, str]:
    """Grammar-constrained continuations of each line's 4-stop prompt,
    batched by prompt length; truncated or unparseable rows are omitted."""
    mask = GrammarMask(tokenizer, alphabet)
    stop_id = tokenizer.id_of(".")
    buckets: dict[int, list[tuple[int, list[int]]]] = {}
    for i in indices:
        ids = tokenizer.tokenize(make_prompt(lines[i]))
        buckets.setdefault(len(ids), []).append((i, ids))
    out: dict[int, str] = {}
    for length in sorted(buckets):
        rows = buckets[length]
        results = generate_batch(
            model,
            [ids for _, ids in rows],
            stop_id=stop_id,
            max_tokens=model.config.context_length,
            temperature=temperature,
            top_k=top_k,
            seed=seed * 100_003 + length,
            constraint=mask.allowed,
        )
        for (i, _), res in zip(rows, results):
            if res.truncated:
                continue
            text = tokenizer.detokenize(res.ids)
            try:
                parse(text, alphabet)
            except Exception:
                continue
            out[i] = text
    return out


def transformer_days(
    model: Model,
    tokenizer: BpeTokenizer,
    alphabet: TrajectoryAlphabet,
    lines: list[str],
    indices: list[int],
    temperature: float = 1.0,
    seed: int = 1,
) -> dict[int, DayTrajectory | None]:
    """Parsed-day view of generate_lines; None for rows that produced nothing."""
    texts = generate_lines(model, tokenizer, alphabet, lines, indices, temperature, 0, seed)
    return {
        i: parse(texts[i], alphabet)[2] if i in texts else None
        for i in indices
    }


def markov_days(
    model: MarkovModel,
    truths: list[DayTrajectory],
    seed: int,
) -> list[DayTrajectory | None]:
    """One 26-step fixed-grid continuation per truth day, re-anchored on the
    truth's first four stops; infeasible conditions yield None."""
    out: list[DayTrajectory | None] = []
    for row, truth in enumerate(truths):
        prompt_end = truth.stops[3].offset
        grid = resample_fixed(truth)
        anchor = prompt_end // FIXED_GRID_MINUTES
        init = grid[anchor - model.order + 1 : anchor + 1]
        if len(init) < model.order:
            out.append(None)
            continue
        gen = markov_generate(model, list(init), steps=GENERATION_STEPS,
                              seed=seed * 1_000_003 + row)
        if gen.infeasible:
            out.append(None)
            continue
        # the continuation keeps going past the prompt, so a truth day that
        # ended at stop 4 must shed its final-home flag there
        stops = [
            Stop(s.cell, s.offset,
                 HomeFlag.NOT_HOME if s.flag == HomeFlag.FINAL_HOME else s.flag)
            for s in truth.stops[:4]
        ]
        for j, cell in enumerate(gen.cells[model.order :], start=1):
            stops.append(Stop(cell, FIXED_GRID_MINUTES * (anchor + j)))
        stops[-1] = Stop(stops[-1].cell, stops[-1].offset, HomeFlag.FINAL_HOME)
        out.append(DayTrajectory(t0=truth.t0, stops=tuple(stops),
                                 device_id=truth.device_id, date=truth.date))
    return out


def ar_minutes(
    model: ARModel, truths: list[DayTrajectory], seed: int
) -> list[list[float]]:
    """Interval continuations seeded with each day's first three true gaps."""
    out = []
    for row, truth in enumerate(truths):
        init = [float(g) for g in truth.gaps()[: model.p]]
        out.append(
            ar_generate(model, init, horizon=HORIZON_MINUTES,
                        seed=seed * 1_000_003 + row)
        )
    return out


def _post_prompt_gaps(day: DayTrajectory, n_prompt_stops: int = 4) -> list[float]:
    return [float(g) for g in day.gaps()[n_prompt_stops - 1 :]]


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_dir = out / "metrics"
    metrics_dir.mkdir(exist_ok=True)
    timings: dict[str, float] = {}
    clock = time.perf_counter

    t = clock()
    generate_corpus(
        GeneratorConfig(n_agents=config.n_agents, n_days=config.n_days),
        out / "synth",
        seed=config.seed,
    )
    timings["synth"] = clock() - t

    t = clock()
    corpus = build_corpus(
        out / "synth" / "pings.csv",
        out / "synth" / "environment.csv",
        out / "corpus",
        seed=config.seed,
        conditioning=config.conditioning,
    )
    timings["corpus"] = clock() - t

    train_lines = (out / "corpus" / "corpus_train.txt").read_text(
        encoding="utf-8"
    ).splitlines()
    test_lines = (out / "corpus" / "corpus_test.txt").read_text(
        encoding="utf-8"
    ).splitlines()

    t = clock()
    tokenizer = BpeTokenizer.train(train_lines, target_vocab_size=config.bpe_target)
    tokenizer.save(out / "vocab.txt")
    timings["bpe"] = clock() - t

    t = clock()
    sequences = [tokenizer.tokenize(line) for line in train_lines]
    model = Model(ModelConfig(
        vocab_size=tokenizer.vocab_size,
        n_layers=config.n_layers,
        n_heads=config.n_heads,
        d_model=config.d_model,
        context_length=config.context_length,
        dropout=config.dropout,
        seed=config.train_seed,
    ))
    result = train(model, sequences, TrainConfig(
        steps=config.steps,
        batch_size=config.batch_size,
        lr=config.lr,
        warmup_steps=config.warmup_steps,
        seed=config.train_seed,
    ))
    final_loss = float(np.mean(result.losses[-20:]))
    save_checkpoint(out / "checkpoint.bin", model, step=config.steps,
                    extra_meta={"final_loss": round(final_loss, 6)})
    timings["train"] = clock() - t

    # --- evaluation ---------------------------------------------------------
    t = clock()
    indices = eval_indices(test_lines, tokenizer, config.eval_lines,
                            config.eval_seed)
    records_test = read_day_records(out / "corpus" / "days_test.jsonl")
    records_train = read_day_records(out / "corpus" / "days_train.jsonl")
    truths = [records_test[i][0] for i in indices]

    gen_by_index = transformer_days(
        model, tokenizer, corpus.alphabet, test_lines, indices,
        temperature=config.temperature, seed=config.gen_seed,
    )
    transformer_generated = [gen_by_index[i] for i in indices]
    timings["generate"] = clock() - t

    t = clock()
    train_days = [day for day, _, _ in records_train]
    markov_models = {order: fit_markov(train_days, order) for order in (1, 2)}
    for order, m in markov_models.items():
        save_markov(m, out / f"markov{order}.txt")
    markov_generated = {
        order: markov_days(m, truths, seed=config.gen_seed)
        for order, m in markov_models.items()
    }

    train_gap_series = [[float(g) for g in day.gaps()] for day in train_days]
    ar_model = fit_ar(train_gap_series, config.ar_p)
    save_ar(ar_model, out / "ar.txt")
    ar_generated = ar_minutes(ar_model, truths, seed=config.gen_seed)
    timings["baselines"] = clock() - t

    t = clock()
    hit_rates = {
        "transformer": hit_rate(transformer_generated, truths, corpus.alphabet),
        "markov1": hit_rate(markov_generated[1], truths, corpus.alphabet),
        "markov2": hit_rate(markov_generated[2], truths, corpus.alphabet),
    }

    actual_gaps = [_post_prompt_gaps(day) for day in truths]
    kept = [i for i, day in enumerate(transformer_generated) if day is not None]
    male_tables = {
        "transformer": male(
            [_post_prompt_gaps(transformer_generated[i]) for i in kept],
            [actual_gaps[i] for i in kept],
        ),
        "ar3": male(ar_generated, actual_gaps),
    }

    # interval CDFs on the post-prompt slice every model actually generates;
    # ground truth is the tokenized test line (representative minutes)
    truth_line_days = [parse(test_lines[i], corpus.alphabet)[2] for i in indices]
    truth_pool = [g for day in truth_line_days for g in _post_prompt_gaps(day)]
    transformer_pool = [
        g for day in transformer_generated if day is not None
        for g in _post_prompt_gaps(day)
    ]
    ar_pool = [g for gaps in ar_generated for g in gaps]
    cdfs = {
        "truth": EmpiricalCdf.of(truth_pool),
        "transformer": EmpiricalCdf.of(transformer_pool),
        "ar3": EmpiricalCdf.of(ar_pool),
    }
    ks = {
        "transformer": ks_distance(cdfs["transformer"], cdfs["truth"]),
        "ar3": ks_distance(cdfs["ar3"], cdfs["truth"]),
    }
    timings["metrics"] = clock() - t

    write_hit_rate_csv(metrics_dir / "hit_rate.csv", hit_rates)
    write_male_csv(metrics_dir / "male.csv", male_tables)
    write_cdf_csv(metrics_dir / "interval_cdf.csv", cdfs)
    _write_json(metrics_dir / "ks.json", {k: round(v, 6) for k, v in ks.items()})
    (metrics_dir / "tables.txt").write_text(
        format_hit_rate_tables(hit_rates) + "\n\n" + format_male_table(male_tables)
        + "\n", encoding="utf-8",
    )
    _write_json(out / "resolved_config.json", _resolved_config(config))
    _write_json(metrics_dir / "timings.json",
                {k: round(v, 3) for k, v in timings.items()})

    return PipelineResult(
        config=config, out_dir=out, corpus=corpus, tokenizer=tokenizer,
        model=model, hit_rates=hit_rates, male_tables=male_tables, ks=ks,
        eval_indices=indices, final_loss=final_loss, timings=timings,
    )


def smoke_config(out_dir: str, seed: int = 5) -> PipelineConfig:
    """Small, fast settings used by the determinism check and the CLI smoke."""
    return PipelineConfig(
        out_dir=out_dir, n_agents=100, n_days=7, seed=seed,
        bpe_target=384, d_model=32, n_layers=2, n_heads=2,
        context_length=128, dropout=0.0, steps=300, batch_size=32,
        lr=1e-3, warmup_steps=30, eval_lines=60,
    )


# --- conditioning comparison ----------------------------------------------------


@dataclass(frozen=True)
class ConditioningConfig:
    out_dir: str
    n_agents: int = 400
    n_days: int = 21
    seed: int = 23
    bpe_target: int = 512
    d_model: int = 64
    n_layers: int = 3
    n_heads: int = 4
    context_length: int = 128
    dropout: float = 0.1
    steps: int = 1200
    batch_size: int = 48
    lr: float = 1e-3
    warmup_steps: int = 100
    train_seed: int = 0
    eval_lines: int = 300
    eval_seed: int = 7
    attention_lines: int = 60


@dataclass
class ConditioningResult:
    config: ConditioningConfig
    out_dir: Path
    accuracy_conditioned: float
    accuracy_unconditioned: float
    day_type_by_layer: list[float]  # location-step attention on day-type tokens
    evaluated: int
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.accuracy_conditioned - self.accuracy_unconditioned


def predict_next_cell(
    model: Model,
    tokenizer: BpeTokenizer,
    mask: GrammarMask,
    prefix_ids: list[int],
) -> str:
    """Greedy grammar-constrained decode of exactly one full cell."""
    ids = list(prefix_ids)
    state = mask.state_after(ids)
    if state[0] != 1:
        raise ExperimentError("prefix must end right before a cell")
    chars: list[str] = []
    while state[0] != AFTER_CELL:
        legal = mask.mask_for_state(state)
        logits = model.forward(np.asarray([ids]))[0, -1].astype(np.float64)
        logits = np.where(legal, logits, -np.inf)
        next_id = int(np.argmax(logits))
        ids.append(next_id)
        surface = tokenizer.token_of(next_id)
        chars.append(surface)
        state = mask.state_after(ids)
    return "".join(chars)


def next_location_accuracy(
    model: Model,
    tokenizer: BpeTokenizer,
    alphabet: TrajectoryAlphabet,
    lines: list[str],
    indices: list[int],
) -> tuple[float, int]:
    """Share of lines whose fifth stop is decoded exactly, teacher-forcing the
    true fourth interval; lines without a fifth stop are skipped."""
    mask = GrammarMask(tokenizer, alphabet)
    hits, n = 0, 0
    for i in indices:
        line = lines[i]
        prompt = make_prompt(line)
        if prompt is None or len(prompt) >= len(line) - 1:
            continue  # no fifth stop to predict
        interval_char = line[len(prompt)]
        true_cell_start = len(prompt) + 1
        true_cell = line[true_cell_start : true_cell_start + 5]
        try:
            prefix_ids = tokenizer.tokenize(prompt) + [tokenizer.id_of(interval_char)]
        except Exception:
            continue  # prompt visits cells unseen in training; same skip either model
        predicted = predict_next_cell(model, tokenizer, mask, prefix_ids)
        n += 1
        if predicted == true_cell:
            hits += 1
    if n == 0:
        raise ExperimentError("no line offered a fifth stop to predict")
    return hits / n, n


def run_conditioning(config: ConditioningConfig) -> ConditioningResult:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    clock = time.perf_counter

    t = clock()
    generate_corpus(
        GeneratorConfig(n_agents=config.n_agents, n_days=config.n_days),
        out / "synth",
        seed=config.seed,
    )
    builds = {}
    for name, conditioning in (("conditioned", True), ("plain", False)):
        builds[name] = build_corpus(
            out / "synth" / "pings.csv",
            out / "synth" / "environment.csv" if conditioning else None,
            out / name,
            seed=config.seed,
            conditioning=conditioning,
        )
    timings["data"] = clock() - t

    models, tokenizers, test_lines = {}, {}, {}
    for name in ("conditioned", "plain"):
        t = clock()
        lines = (out / name / "corpus_train.txt").read_text(
            encoding="utf-8"
        ).splitlines()
        test_lines[name] = (out / name / "corpus_test.txt").read_text(
            encoding="utf-8"
        ).splitlines()
        tokenizer = BpeTokenizer.train(lines, target_vocab_size=config.bpe_target)
        tokenizer.save(out / name / "vocab.txt")
        model = Model(ModelConfig(
            vocab_size=tokenizer.vocab_size,
            n_layers=config.n_layers,
            n_heads=config.n_heads,
            d_model=config.d_model,
            context_length=config.context_length,
            dropout=config.dropout,
            seed=config.train_seed,
        ))
        train(model, [tokenizer.tokenize(l) for l in lines], TrainConfig(
            steps=config.steps,
            batch_size=config.batch_size,
            lr=config.lr,
            warmup_steps=config.warmup_steps,
            seed=config.train_seed,
        ))
        save_checkpoint(out / name / "checkpoint.bin", model, step=config.steps)
        models[name], tokenizers[name] = model, tokenizer
        timings[f"train_{name}"] = clock() - t

    # the two corpora serialize the same days in the same order, so weekend
    # membership computed on the conditioned lines indexes the plain ones too
    records = read_day_records(out / "conditioned" / "days_test.jsonl")
    if len(records) != len(test_lines["conditioned"]) or len(records) != len(
        test_lines["plain"]
    ):
        raise ExperimentError("test split sizes diverged between builds")
    weekend = [
        i for i, (_, env, _) in enumerate(records)
        if env is not None and env.day_type == "Weekend"
        and make_prompt(test_lines["conditioned"][i]) is not None
    ]
    rng = np.random.default_rng(config.eval_seed)
    if len(weekend) > config.eval_lines:
        picked = rng.choice(len(weekend), size=config.eval_lines, replace=False)
        weekend = sorted(weekend[i] for i in picked)

    t = clock()
    acc_cond, n_cond = next_location_accuracy(
        models["conditioned"], tokenizers["conditioned"],
        builds["conditioned"].alphabet, test_lines["conditioned"], weekend,
    )
    acc_plain, n_plain = next_location_accuracy(
        models["plain"], tokenizers["plain"],
        builds["plain"].alphabet, test_lines["plain"], weekend,
    )
    if n_cond != n_plain:
        raise ExperimentError("accuracy denominators diverged between models")
    timings["accuracy"] = clock() - t

    t = clock()
    profile_lines = [
        test_lines["conditioned"][i]
        for i in weekend[: config.attention_lines]
    ]
    location_profile, _ = attention_profile(
        models["conditioned"], tokenizers["conditioned"], profile_lines
    )
    day_type_by_layer = [layer["day_type"] for layer in location_profile.layers]
    timings["attention"] = clock() - t

    result = ConditioningResult(
        config=config, out_dir=out,
        accuracy_conditioned=acc_cond,
        accuracy_unconditioned=acc_plain,
        day_type_by_layer=day_type_by_layer,
        evaluated=n_cond,
        timings=timings,
    )
    _write_json(out / "resolved_config.json", _resolved_config(config))
    _write_json(out / "conditioning.json", {
        "accuracy_conditioned": round(acc_cond, 4),
        "accuracy_unconditioned": round(acc_plain, 4),
        "gap": round(result.gap, 4),
        "evaluated": n_cond,
        "day_type_by_layer": [round(w, 6) for w in day_type_by_layer],
    })
    _write_json(out / "timings.json", {k: round(v, 3) for k, v in timings.items()})
    return result

"""Markov-chain and autoregressive baselines.

Markov models live on a fixed 30-minute grid: each day is resampled to the
cell occupied at 0, 30, 60, ... minutes after the first stop, and first- or
second-order conditional frequencies are counted over that grid. Conditions
backed by 30 or fewer samples are infeasible (strictly "more than 30"
required). The interval baseline is an AR(p) regression on log10 minutes
whose generator clamps every interval to at least 10 minutes.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .corpus import DayTrajectory

FEASIBILITY_THRESHOLD = 30
FIXED_GRID_MINUTES = 30
LOWER_BOUND_MINUTES = 10.0
GENERATION_STEPS = 26  # 26 x 30 min = 13 h
HORIZON_MINUTES = 780.0

MARKOV_MAGIC = "# trajmarkov v1"
AR_MAGIC = "# trajar v1"


class BaselineError(Exception):
    pass


class InsufficientDataError(BaselineError):
    """Not enough interval samples to form a single regression row."""


def _cell_hex(cell: str) -> str:
    return "+".join(f"{ord(c):04X}" for c in cell)


def _cell_unhex(text: str) -> str:
    return "".join(chr(int(h, 16)) for h in text.split("+"))


def resample_fixed(day: DayTrajectory, dt: int = FIXED_GRID_MINUTES) -> list[str]:
    """Piecewise-constant cell at 0, dt, 2*dt, ... up to the final offset."""
    cells = []
    stop_index = 0
    final = day.stops[-1].offset
    for t in range(0, final + 1, dt):
        while (
            stop_index + 1 < len(day.stops)
            and day.stops[stop_index + 1].offset <= t
        ):
            stop_index += 1
        cells.append(day.stops[stop_index].cell)
    return cells


@dataclass
class MarkovModel:
    order: int
    counts: dict[tuple[str, ...], Counter] = field(default_factory=dict)
    threshold: int = FEASIBILITY_THRESHOLD
    dt: int = FIXED_GRID_MINUTES

    def condition_total(self, condition: tuple[str, ...]) -> int:
        bucket = self.counts.get(condition)
        return sum(bucket.values()) if bucket else 0

    def feasible(self, condition: tuple[str, ...]) -> bool:
        return self.condition_total(condition) > self.threshold

    def probabilities(self, condition: tuple[str, ...]) -> dict[str, Fraction]:
        """Exact maximum-likelihood conditionals; sums to 1 by construction."""
        bucket = self.counts.get(condition)
        if not bucket:
            return {}
        total = sum(bucket.values())
        return {cell: Fraction(n, total) for cell, n in sorted(bucket.items())}


@dataclass(frozen=True)
class MarkovGeneration:
    cells: tuple[str, ...]  # init cells plus whatever was generated
    infeasible_at: int | None  # 1-based generation step, None if completed

    @property
    def infeasible(self) -> bool:
        return self.infeasible_at is not None


def fit_markov(days: list[DayTrajectory], order: int) -> MarkovModel:
    if order not in (1, 2):
        raise BaselineError(f"order must be 1 or 2, got {order}")
    model = MarkovModel(order)
    for day in days:
        grid = resample_fixed(day)
        for i in range(order, len(grid)):
            condition = tuple(grid[i - order : i])
            model.counts.setdefault(condition, Counter())[grid[i]] += 1
    return model


def markov_generate(
    model: MarkovModel,
    init_cells: list[str],
    steps: int = GENERATION_STEPS,
    seed: int = 0,
) -> MarkovGeneration:
    """Sample `steps` grid cells; an infeasible condition aborts at its step."""
    if len(init_cells) != model.order:
        raise BaselineError(
            f"order-{model.order} model needs {model.order} initial cells, "
            f"got {len(init_cells)}"
        )
    rng = random.Random(seed)
    cells = list(init_cells)
    for step in range(1, steps + 1):
        condition = tuple(cells[-model.order :])
        if not model.feasible(condition):
            return MarkovGeneration(tuple(cells), infeasible_at=step)
        probs = model.probabilities(condition)
        destinations = list(probs)
        weights = [float(probs[d]) for d in destinations]
        cells.append(rng.choices(destinations, weights=weights, k=1)[0])
    return MarkovGeneration(tuple(cells), infeasible_at=None)


def save_markov(model: MarkovModel, path: str | Path) -> None:
    lines = [
        f"{MARKOV_MAGIC} order={model.order} dt={model.dt} threshold={model.threshold}"
    ]
    for condition in sorted(model.counts):
        bucket = model.counts[condition]
        for cell in sorted(bucket):
            cond_text = "\t".join(_cell_hex(c) for c in condition)
            lines.append(f"{cond_text}\t{_cell_hex(cell)}\t{bucket[cell]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_markov(path: str | Path) -> MarkovModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(MARKOV_MAGIC):
        raise BaselineError(f"{path}: not a markov dump")
    header = dict(kv.split("=") for kv in lines[0].split()[3:])
    model = MarkovModel(
        order=int(header["order"]), threshold=int(header["threshold"]),
        dt=int(header["dt"]),
    )
    for line in lines[1:]:
        if not line.strip():
            continue
        *cond, dest, count = line.split("\t")
        condition = tuple(_cell_unhex(c) for c in cond)
        model.counts.setdefault(condition, Counter())[_cell_unhex(dest)] = int(count)
    return model


# --- AR(p) interval model -----------------------------------------------------


@dataclass
class ARModel:
    p: int
    phi: np.ndarray  # phi[0] intercept, phi[1..p] lag coefficients
    residuals: np.ndarray  # empirical pool on the log10 scale
    lower_bound: float = LOWER_BOUND_MINUTES
    degenerate: bool = False  # design matrix was rank-deficient
    noise: str = "bootstrap"  # or "gaussian"

    def predict_log(self, lags: list[float]) -> float:
        """log10 forecast from the p most recent log10 intervals (newest first)."""
        return float(self.phi[0] + np.dot(self.phi[1:], lags[: self.p]))


def _regression_rows(series: list[list[float]], p: int, start_at: int | None = None):
    """(X, y) over every day sequence; lag columns newest-first, no day crossing."""
    first = start_at if start_at is not None else p
    xs, ys = [], []
    for seq in series:
        logs = [math.log10(v) for v in seq]
        for k in range(first, len(logs)):
            ys.append(logs[k])
            xs.append([1.0] + [logs[k - i] for i in range(1, p + 1)])
    return np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)


def fit_ar(series: list[list[float]], p: int, noise: str = "bootstrap") -> ARModel:
    """Least squares for Eq.-style alpha regression on log10 minutes."""
    if not 1 <= p <= 10:
        raise BaselineError(f"lag order must be in 1..10, got {p}")
    X, y = _regression_rows(series, p)
    if len(y) == 0:
        raise InsufficientDataError(
            f"no sequence long enough for {p} lags plus a target"
        )
    phi, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    residuals = y - X @ phi
    return ARModel(
        p=p, phi=phi, residuals=residuals,
        degenerate=rank < p + 1, noise=noise,
    )


def select_order_aic(series: list[list[float]], p_max: int = 10) -> int:
    """AIC = n*ln(RSS/n) + 2(p+1), on the common sample rows of the largest
    candidate so every order is judged on identical targets; ties pick the
    smaller p.
    """
    while p_max >= 1:
        X_full, y = _regression_rows(series, p_max, start_at=p_max)
        if len(y) > 0:
            break
        p_max -= 1
    else:
        raise InsufficientDataError("no rows for any candidate order")
    n = len(y)
    best_p, best_aic = None, None
    for p in range(1, p_max + 1):
        X = X_full[:, : p + 1]
        phi, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
        rss = float(((y - X @ phi) ** 2).sum())
        aic = n * math.log(max(rss, 1e-12) / n) + 2 * (p + 1)
        if best_aic is None or aic < best_aic - 1e-12:
            best_p, best_aic = p, aic
    return best_p


def ar_generate(
    model: ARModel,
    init_minutes: list[float],
    horizon: float = HORIZON_MINUTES,
    seed: int = 0,
) -> list[float]:
    """Iterate the lag recurrence until the cumulative time crosses `horizon`.

    Each interval is 10^alpha when alpha >= 1 and the 10-minute lower bound
    otherwise; lags always see the clamped value actually emitted.
    """
    if len(init_minutes) != model.p:
        raise BaselineError(f"need {model.p} initial intervals, got {len(init_minutes)}")
    if any(v <= 0 for v in init_minutes):
        raise BaselineError("initial intervals must be positive minutes")
    rng = np.random.default_rng(seed)
    lags = [math.log10(v) for v in reversed(init_minutes)]  # newest first
    if model.noise == "gaussian":
        sigma = float(model.residuals.std()) if model.residuals.size else 0.0
    out: list[float] = []
    cumulative = 0.0
    while cumulative <= horizon:
        if model.noise == "gaussian":
            eps = float(rng.normal(0.0, sigma))
        elif model.residuals.size:
            eps = float(rng.choice(model.residuals))
        else:
            eps = 0.0
        alpha = model.predict_log(lags) + eps
        dt = 10.0**alpha if alpha >= 1.0 else model.lower_bound
        out.append(dt)
        cumulative += dt
        lags = [math.log10(dt)] + lags[: model.p - 1]
    return out


def save_ar(model: ARModel, path: str | Path) -> None:
    lines = [
        f"{AR_MAGIC} p={model.p} lower_bound={model.lower_bound} "
        f"noise={model.noise} degenerate={int(model.degenerate)}",
        "phi\t" + "\t".join(repr(float(v)) for v in model.phi),
    ]
    lines.extend(repr(float(r)) for r in model.residuals)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_ar(path: str | Path) -> ARModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(AR_MAGIC):
        raise BaselineError(f"{path}: not an AR dump")
    header = dict(kv.split("=") for kv in lines[0].split()[3:])
    if not lines[1].startswith("phi\t"):
        raise BaselineError(f"{path}: missing phi row")
    phi = np.asarray([float(v) for v in lines[1].split("\t")[1:]])
    residuals = np.asarray([float(v) for v in lines[2:] if v.strip()])
    return ARModel(
        p=int(header["p"]), phi=phi, residuals=residuals,
        lower_bound=float(header["lower_bound"]),
        degenerate=bool(int(header["degenerate"])),
        noise=header["noise"],
    )

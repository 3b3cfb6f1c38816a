"""Metrics for generated trajectories: hit rates, log-distance error, CDFs.

Positions are compared at fixed horizons after the day's first arrival using
carry-forward semantics (the cell occupied at time t is that of the last
stop arriving at or before t), with distances measured between cell centers
on the mean-radius sphere.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import (
    GeoPoint,
    TrajectoryAlphabet,
    decode_center,
    level_range_of_char,
)
from .corpus import DayTrajectory

#: IUGG mean Earth radius, km.
EARTH_RADIUS_KM = 6371.0088

HORIZONS = (("1h", 60), ("2h", 120), ("4h", 240), ("8h", 480), ("final", None))
RADII_KM = (3.0, 10.0)
MALE_POSITIONS = (1, 2, 3, 4)


class EvaluationError(Exception):
    pass


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points on the mean-radius sphere."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    s = (
        math.sin((lat2 - lat1) / 2) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    )
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(s))


def position_at(day: DayTrajectory, t: float) -> str:
    """Cell occupied t minutes after the first arrival (carry-forward)."""
    cell = day.stops[0].cell
    for stop in day.stops:
        if stop.offset <= t:
            cell = stop.cell
        else:
            break
    return cell


def make_prompt(line: str, min_stops: int = 4) -> str | None:
    """Prefix of a serialized line through its 4th stop (specials included).

    Returns None for lines with fewer than `min_stops` stops. The prompt is
    byte-for-byte a prefix of the input line, ending after the separator that
    follows the 4th stop — so the first thing left to predict is the next
    interval — or, when the 4th stop is the last, right before the terminal
    mark.
    """
    pos = 0
    while pos < len(line) and line[pos] == "[":
        end = line.find("]", pos)
        if end < 0:
            raise EvaluationError(f"position {pos}: unterminated special token")
        pos = end + 1
    if pos < len(line) and line[pos] == "|":
        pos += 1

    stops_seen = 0
    while pos < len(line):
        if level_range_of_char(line[pos]) != 1:
            raise EvaluationError(f"position {pos}: expected a cell start")
        expected = 1
        while pos < len(line) and level_range_of_char(line[pos]) == expected:
            pos += 1
            expected += 1
        if pos < len(line) and line[pos] == ",":
            pos += 1
        stops_seen += 1
        if stops_seen == min_stops:
            if pos < len(line) and line[pos] == "_":
                pos += 1
            return line[:pos]
        if pos >= len(line) or line[pos] == ".":
            return None  # fewer stops than the prompt needs
        if line[pos] != "_":
            raise EvaluationError(f"position {pos}: expected '_' or '.'")
        pos += 1
        if pos >= len(line) or level_range_of_char(line[pos]) != "R":
            raise EvaluationError(f"position {pos}: expected an interval character")
        pos += 1
    return None


@dataclass(frozen=True)
class EmpiricalCdf:
    samples: np.ndarray  # sorted ascending

    @classmethod
    def of(cls, values) -> "EmpiricalCdf":
        arr = np.sort(np.asarray(list(values), dtype=np.float64))
        if arr.size == 0:
            raise EvaluationError("empty sample set")
        return cls(arr)

    @property
    def n(self) -> int:
        return int(self.samples.size)

    def at(self, x: float) -> float:
        return float(np.searchsorted(self.samples, x, side="right")) / self.n

    def table(self, grid) -> list[tuple[float, float]]:
        return [(float(g), self.at(float(g))) for g in grid]


def ks_distance(a: EmpiricalCdf, b: EmpiricalCdf) -> float:
    """Exact sup-norm gap between two empirical CDFs."""
    points = np.union1d(a.samples, b.samples)
    gaps = [abs(a.at(x) - b.at(x)) for x in points]
    return max(gaps)


def _center(cell: str, alphabet: TrajectoryAlphabet) -> GeoPoint:
    return decode_center(alphabet.chars_to_cell(cell))


def hourly_distance_cdf(
    days: list[DayTrajectory], alphabet: TrajectoryAlphabet
) -> EmpiricalCdf:
    """Pooled straight-line distances between positions one hour apart."""
    samples = []
    for day in days:
        final = day.stops[-1].offset
        h = 0
        while h + 60 <= final:
            a = _center(position_at(day, h), alphabet)
            b = _center(position_at(day, h + 60), alphabet)
            samples.append(haversine_km(a, b))
            h += 60
    return EmpiricalCdf.of(samples)


def interval_cdf(days: list[DayTrajectory]) -> EmpiricalCdf:
    """Pooled CDF of inter-stop gaps in minutes."""
    samples = [gap for day in days for gap in day.gaps()]
    return EmpiricalCdf.of(samples)


@dataclass(frozen=True)
class HitRateTable:
    rates: dict[tuple[str, float], float]  # (horizon label, radius km) -> rate
    evaluated: int
    excluded: int  # infeasible / missing generations, kept out of denominators

    def row(self, horizon: str) -> dict[float, float]:
        return {
            radius: rate
            for (label, radius), rate in self.rates.items()
            if label == horizon
        }

    def inclusive(self, horizon: str, radius: float) -> float:
        """Hit rate with excluded rows counted as misses, so a model that
        cannot produce a rollout for a device scores zero on that device."""
        total = self.evaluated + self.excluded
        if total == 0:
            raise EvaluationError("empty hit-rate table")
        return self.rates[(horizon, radius)] * self.evaluated / total


def hit_rate(
    generated: list[DayTrajectory | None],
    truth: list[DayTrajectory],
    alphabet: TrajectoryAlphabet,
    horizons=HORIZONS,
    radii=RADII_KM,
) -> HitRateTable:
    """Fraction of evaluated lines whose generated position falls within each
    radius of the true position at each horizon after the first arrival.

    A None generation (infeasible baseline run, say) is excluded from every
    denominator and tallied in `excluded`.
    """
    if len(generated) != len(truth):
        raise EvaluationError("generated/truth length mismatch")
    pairs = [(g, t) for g, t in zip(generated, truth) if g is not None]
    excluded = len(truth) - len(pairs)
    hits = {(label, radius): 0 for label, _ in horizons for radius in radii}
    for gen, true in pairs:
        for label, minutes in horizons:
            if minutes is None:
                gen_cell, true_cell = gen.stops[-1].cell, true.stops[-1].cell
            else:
                gen_cell = position_at(gen, minutes)
                true_cell = position_at(true, minutes)
            distance = haversine_km(
                _center(gen_cell, alphabet), _center(true_cell, alphabet)
            )
            for radius in radii:
                if distance <= radius:
                    hits[(label, radius)] += 1
    n = len(pairs)
    rates = {key: (count / n if n else 0.0) for key, count in hits.items()}
    return HitRateTable(rates, evaluated=n, excluded=excluded)


@dataclass(frozen=True)
class MaleTable:
    values: dict[int, float]  # position (1-based after prompt) -> mean error
    counts: dict[int, int]


def male(
    generated_minutes: list[list[float]],
    actual_minutes: list[list[float]],
    positions=MALE_POSITIONS,
) -> MaleTable:
    """Mean |log10(generated) - log10(actual)| per post-prompt position."""
    if len(generated_minutes) != len(actual_minutes):
        raise EvaluationError("generated/actual length mismatch")
    sums = dict.fromkeys(positions, 0.0)
    counts = dict.fromkeys(positions, 0)
    for gen, act in zip(generated_minutes, actual_minutes):
        for k in positions:
            if len(gen) >= k and len(act) >= k:
                if gen[k - 1] <= 0 or act[k - 1] <= 0:
                    raise EvaluationError("intervals must be positive minutes")
                sums[k] += abs(math.log10(gen[k - 1]) - math.log10(act[k - 1]))
                counts[k] += 1
    values = {k: (sums[k] / counts[k] if counts[k] else float("nan")) for k in positions}
    return MaleTable(values, counts)


# --- plot/report emission -----------------------------------------------------


def cdf_grid(cdfs: dict[str, EmpiricalCdf], points: int = 50) -> np.ndarray:
    """Log-spaced grid covering all positive samples, with 0 up front when
    any series contains zeros."""
    all_samples = np.concatenate([c.samples for c in cdfs.values()])
    positive = all_samples[all_samples > 0]
    if positive.size == 0:
        return np.array([0.0])
    lo, hi = positive.min(), positive.max()
    grid = np.geomspace(lo, max(hi, lo * (1 + 1e-9)), points)
    if (all_samples == 0).any():
        grid = np.concatenate([[0.0], grid])
    return grid


def write_cdf_csv(path: str | Path, cdfs: dict[str, EmpiricalCdf], points: int = 50):
    """Long format: series,x,fraction — one row per grid point per series."""
    grid = cdf_grid(cdfs, points)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "x", "fraction"])
        for name in sorted(cdfs):
            for x, fraction in cdfs[name].table(grid):
                writer.writerow([name, f"{x:.6g}", f"{fraction:.6f}"])


def write_hit_rate_csv(path: str | Path, tables: dict[str, HitRateTable]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "horizon", "radius_km", "rate", "evaluated", "excluded"])
        for name in sorted(tables):
            table = tables[name]
            for (label, radius), rate in table.rates.items():
                writer.writerow(
                    [name, label, radius, f"{rate:.4f}", table.evaluated, table.excluded]
                )


def write_male_csv(path: str | Path, tables: dict[str, MaleTable]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "position", "male", "count"])
        for name in sorted(tables):
            table = tables[name]
            for position in sorted(table.values):
                writer.writerow(
                    [name, position, f"{table.values[position]:.4f}",
                     table.counts[position]]
                )


def format_hit_rate_tables(tables: dict[str, HitRateTable], radii=RADII_KM) -> str:
    """Aligned text block: one row per model, 3 km rate with 10 km in parens."""
    horizons = [label for label, _ in HORIZONS]
    width = max([len(n) for n in tables] + [5])
    header = "model".ljust(width) + "".join(h.rjust(14) for h in horizons)
    lines = [header]
    for name in sorted(tables):
        table = tables[name]
        cells = []
        for label in horizons:
            row = table.row(label)
            cells.append(f"{row[radii[0]]:.2f} ({row[radii[1]]:.2f})".rjust(14))
        lines.append(name.ljust(width) + "".join(cells))
    return "\n".join(lines)


def format_male_table(tables: dict[str, MaleTable]) -> str:
    names = ["next", "second", "third", "fourth"]
    width = max([len(n) for n in tables] + [5])
    lines = ["model".ljust(width) + "".join(n.rjust(10) for n in names)]
    for name in sorted(tables):
        table = tables[name]
        cells = [f"{table.values[k]:.3f}".rjust(10) for k in MALE_POSITIONS]
        lines.append(name.ljust(width) + "".join(cells))
    return "\n".join(lines)

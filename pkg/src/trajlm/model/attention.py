"""Attention-weight profiles over conditioning tokens.

For every teacher-forced generation step of the test lines, the final
position's attention row (mean over heads) is bucketed by what each source
position holds: one of the eight conditioning-token categories, the
delimiter, past location characters, or past interval characters. Steps are
split by what is being generated — a location token vs an interval token —
and averaged separately, per layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..codec import SPECIAL_TOKEN_CATEGORIES, level_range_of_char
from ..tokenizer import BpeTokenizer
from .network import Model

CATEGORIES = (
    "day_type", "temperature", "weather", "covid",
    "gender", "age", "home_city", "work_city",
    "delimiter", "location", "interval",
)

_SPECIAL_CATEGORY = {
    token: category
    for category, tokens in SPECIAL_TOKEN_CATEGORIES.items()
    for token in tokens
}


def classify_token(surface: str) -> str:
    """One of CATEGORIES, or "other" (grammar marks and anything else)."""
    category = _SPECIAL_CATEGORY.get(surface)
    if category is not None:
        return category
    if surface == "|":
        return "delimiter"
    kind = level_range_of_char(surface[0]) if surface else None
    if kind == "R":
        return "interval"
    if kind is not None:
        return "location"
    return "other"


@dataclass
class AttentionProfile:
    """Per-layer category weights for one kind of generation step."""

    kind: str  # "location" or "interval"
    layers: list[dict[str, float]]
    steps: int
    aggregation: str = "mean over heads, then mean over steps"
    absent: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for row in self.layers:
            total = sum(row.values())
            if self.steps and total > 1.0 + 1e-5:
                raise ValueError(f"category weights sum to {total} > 1")
            for value in row.values():
                if not -1e-9 <= value <= 1.0 + 1e-9:
                    raise ValueError(f"weight {value} outside [0, 1]")


def attention_profile(
    model: Model,
    tokenizer: BpeTokenizer,
    lines: list[str],
) -> tuple[AttentionProfile, AttentionProfile]:
    """(location-step profile, interval-step profile) over the given lines."""
    n_layers = model.config.n_layers
    keys = CATEGORIES + ("other",)
    sums = {
        kind: [dict.fromkeys(keys, 0.0) for _ in range(n_layers)]
        for kind in ("location", "interval")
    }
    counts = {"location": 0, "interval": 0}
    seen_source_categories: set[str] = set()

    for line in lines:
        ids = tokenizer.tokenize(line)
        if len(ids) < 2:
            continue
        surfaces = [tokenizer.token_of(i) for i in ids]
        source_cats = [classify_token(s) for s in surfaces]
        seen_source_categories.update(source_cats[:-1])
        _, attentions = model.forward(np.asarray([ids[:-1]]), capture_attention=True)
        head_mean = [layer[0].mean(axis=0) for layer in attentions]  # (T, T)
        for t in range(len(ids) - 1):
            step_kind = classify_token(surfaces[t + 1])
            if step_kind not in ("location", "interval"):
                continue
            counts[step_kind] += 1
            for layer_index in range(n_layers):
                row = head_mean[layer_index][t, : t + 1]
                bucket = sums[step_kind][layer_index]
                for j, weight in enumerate(row):
                    bucket[source_cats[j]] += float(weight)

    absent = tuple(c for c in CATEGORIES if c not in seen_source_categories)
    profiles = []
    for kind in ("location", "interval"):
        n = counts[kind]
        layers = [
            {k: (v / n if n else 0.0) for k, v in bucket.items()}
            for bucket in sums[kind]
        ]
        profiles.append(AttentionProfile(kind, layers, n, absent=absent))
    return profiles[0], profiles[1]

"""Autoregressive sampling from a trained model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .network import ContextOverflowError, Model

#: Optional grammar hook: maps the ids emitted so far to a boolean
#: allowed-vocabulary mask for the next position.
ConstraintFn = Callable[[Sequence[int]], np.ndarray]


@dataclass(frozen=True)
class GenerationResult:
    ids: tuple[int, ...]
    truncated: bool  # hit the context window (or a constraint dead end)


def generate(
    model: Model,
    prefix_ids: Sequence[int],
    stop_id: int | None = None,
    max_tokens: int = 256,
    temperature: float = 1.0,
    top_k: int = 0,
    seed: int = 0,
    constraint: ConstraintFn | None = None,
) -> GenerationResult:
    """Sample token-by-token until stop_id, max_tokens, or context fill.

    temperature <= 0 is greedy argmax; top_k = 0 keeps the full distribution.
    A constraint callback masks illegal next tokens before sampling.
    """
    if len(prefix_ids) == 0:
        raise ValueError("prefix must be non-empty")
    context = model.config.context_length
    if len(prefix_ids) > context:
        raise ContextOverflowError(
            f"prefix of {len(prefix_ids)} tokens exceeds context {context}"
        )
    rng = np.random.default_rng(seed)
    ids = list(prefix_ids)
    for _ in range(max_tokens):
        if len(ids) >= context:
            return GenerationResult(tuple(ids), truncated=True)
        logits = model.forward(np.asarray([ids]))[0, -1].astype(np.float64)
        if constraint is not None:
            allowed = np.asarray(constraint(ids), dtype=bool)
            if not allowed.any():
                return GenerationResult(tuple(ids), truncated=True)
            logits = np.where(allowed, logits, -np.inf)
        if temperature <= 0.0:
            next_id = int(np.argmax(logits))
        else:
            scaled = logits / temperature
            if top_k > 0 and top_k < scaled.size:
                cutoff = np.partition(scaled, -top_k)[-top_k]
                scaled = np.where(scaled >= cutoff, scaled, -np.inf)
            scaled -= scaled.max()
            probs = np.exp(scaled)
            probs /= probs.sum()
            next_id = int(rng.choice(probs.size, p=probs))
        ids.append(next_id)
        if stop_id is not None and next_id == stop_id:
            break
    return GenerationResult(tuple(ids), truncated=False)


def generate_batch(
    model: Model,
    prompts: Sequence[Sequence[int]],
    stop_id: int | None = None,
    max_tokens: int = 256,
    temperature: float = 1.0,
    top_k: int = 0,
    seed: int = 0,
    constraint: ConstraintFn | None = None,
) -> list[GenerationResult]:
    """Sample continuations for equal-length prompts in one forward per step.

    Greedy decoding (temperature <= 0) matches per-prompt `generate` output;
    stochastic draws use one stream for the whole batch, so they are
    deterministic under (prompts, seed) but differ from the sequential ones.
    When a stop token is requested, any row that fails to emit it (constraint
    dead end, context fill, or max_tokens exhausted) comes back truncated.
    """
    if not prompts:
        return []
    lengths = {len(p) for p in prompts}
    if len(lengths) != 1:
        raise ValueError("prompts must share one length; bucket them first")
    prompt_len = lengths.pop()
    if prompt_len == 0:
        raise ValueError("prefix must be non-empty")
    context = model.config.context_length
    if prompt_len > context:
        raise ContextOverflowError(
            f"prefix of {prompt_len} tokens exceeds context {context}"
        )
    rng = np.random.default_rng(seed)
    B = len(prompts)
    ids = np.asarray(prompts, dtype=np.int64)
    alive = np.ones(B, dtype=bool)
    end_at = np.full(B, -1, dtype=np.int64)
    truncated = np.zeros(B, dtype=bool)
    for _ in range(max_tokens):
        if not alive.any():
            break
        if ids.shape[1] >= context:
            truncated |= alive
            end_at[alive] = ids.shape[1]
            alive[:] = False
            break
        logits = model.forward(ids)[:, -1, :].astype(np.float64)
        if constraint is not None:
            for row in range(B):
                if not alive[row]:
                    continue
                allowed = np.asarray(constraint(list(ids[row])), dtype=bool)
                if not allowed.any():
                    alive[row] = False
                    truncated[row] = True
                    end_at[row] = ids.shape[1]
                else:
                    logits[row] = np.where(allowed, logits[row], -np.inf)
        if temperature <= 0.0:
            next_ids = np.argmax(logits, axis=-1)
        else:
            scaled = logits / temperature
            if top_k > 0 and top_k < scaled.shape[1]:
                cutoff = np.partition(scaled, -top_k, axis=1)[:, -top_k, None]
                scaled = np.where(scaled >= cutoff, scaled, -np.inf)
            scaled -= scaled.max(axis=1, keepdims=True)
            probs = np.exp(scaled)
            probs /= probs.sum(axis=1, keepdims=True)
            draws = rng.random(B)
            next_ids = (probs.cumsum(axis=1) < draws[:, None]).sum(axis=1)
        next_ids = np.where(alive, next_ids, 0)
        ids = np.concatenate([ids, next_ids[:, None]], axis=1)
        if stop_id is not None:
            just_stopped = alive & (next_ids == stop_id)
            end_at[just_stopped] = ids.shape[1]
            alive &= ~just_stopped
    if stop_id is not None:
        truncated |= alive
    end_at[alive] = ids.shape[1]
    return [
        GenerationResult(tuple(int(t) for t in ids[row, : end_at[row]]), bool(truncated[row]))
        for row in range(B)
    ]

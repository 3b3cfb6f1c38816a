"""Token-level legality masks that keep sampled text inside the line grammar.

A small DFA mirrors the grammar accepted by corpus.parse, restricted to the
shape the corpus writer actually emits: optional conditioning tokens, one
delimiter, then full five-character cells joined by interval separators. A
vocabulary token is legal in a state iff all of its characters advance the
DFA, so a sampler that applies the mask each step can only terminate a line
with the final-home mark and every finished line reparses.

Masks are computed once per DFA state and cached; per-step cost is a replay
of the id sequence (cheap next to a forward pass) plus one dict lookup.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .codec import (
    DELIMITER,
    FINAL_HOME_MARK,
    SEPARATOR,
    SPECIAL_TOKEN_CATEGORIES,
    TEMP_HOME_MARK,
    TrajectoryAlphabet,
    level_range_of_char,
)
from .tokenizer import BpeTokenizer


class GrammarStateError(Exception):
    """The replayed id sequence is not a valid partial line."""


# DFA phases. Values 1..5 mean "expect the level-k character of a cell";
# cells are only complete at level 5. PREFIX additionally tracks which
# conditioning categories have been emitted (see _State).
PREFIX = 0
AFTER_CELL = 6
AFTER_TEMP = 7
EXPECT_INTERVAL = 8
DONE = 9

_ENV_CATEGORIES = frozenset(("day_type", "temperature", "weather", "covid"))

_CATEGORY_OF_TOKEN = {
    token: category
    for category, tokens in SPECIAL_TOKEN_CATEGORIES.items()
    for token in tokens
}

#: phase + conditioning categories seen so far (only meaningful in PREFIX).
_State = tuple[int, frozenset[str]]

_START: _State = (PREFIX, frozenset())


def _delimiter_ok(used: frozenset[str]) -> bool:
    """parse() wants the four environment categories all-or-none."""
    env_used = used & _ENV_CATEGORIES
    return env_used in (frozenset(), _ENV_CATEGORIES)


class GrammarMask:
    """Boolean next-token masks for one tokenizer, usable as a sampling constraint.

    Pass ``mask.allowed`` as the constraint callback of generate/generate_batch.
    If an alphabet is given, grid and interval characters outside it are
    rejected as well (relevant when the tokenizer was trained elsewhere).
    """

    def __init__(
        self,
        tokenizer: BpeTokenizer,
        alphabet: TrajectoryAlphabet | None = None,
    ):
        self._tokenizer = tokenizer
        self._known_chars = alphabet.all_chars() if alphabet is not None else None
        self._token_strings = [
            tokenizer.token_of(i) for i in range(tokenizer.vocab_size)
        ]
        self._mask_cache: dict[_State, np.ndarray] = {}

    # --- DFA ---------------------------------------------------------------

    def _advance_char(self, state: _State, ch: str) -> _State | None:
        phase, used = state
        rng = level_range_of_char(ch)
        if rng is not None and self._known_chars is not None and ch not in self._known_chars:
            return None
        if phase == PREFIX:
            if ch == DELIMITER and _delimiter_ok(used):
                return (1, used)
            if rng == 1 and not used:  # plain line: first cell, no delimiter
                return (2, used)
            return None
        if 1 <= phase <= 5:
            if rng == phase:
                return (phase + 1, used) if phase < 5 else (AFTER_CELL, used)
            return None
        if phase == AFTER_CELL:
            if ch == TEMP_HOME_MARK:
                return (AFTER_TEMP, used)
            if ch == SEPARATOR:
                return (EXPECT_INTERVAL, used)
            if ch == FINAL_HOME_MARK:
                return (DONE, used)
            return None
        if phase == AFTER_TEMP:
            return (EXPECT_INTERVAL, used) if ch == SEPARATOR else None
        if phase == EXPECT_INTERVAL:
            return (1, used) if rng == "R" else None
        return None  # DONE accepts nothing

    def _advance_token(self, state: _State, token: str) -> _State | None:
        category = _CATEGORY_OF_TOKEN.get(token)
        if category is not None:
            phase, used = state
            if phase == PREFIX and category not in used:
                return (PREFIX, used | {category})
            return None
        for ch in token:
            state = self._advance_char(state, ch)
            if state is None:
                return None
        return state

    def state_after(self, ids: Sequence[int]) -> _State:
        state: _State | None = _START
        for pos, token_id in enumerate(ids):
            state = self._advance_token(state, self._token_strings[token_id])
            if state is None:
                raise GrammarStateError(
                    f"token {token_id} at position {pos} breaks the line grammar"
                )
        return state

    # --- masks ---------------------------------------------------------------

    def mask_for_state(self, state: _State) -> np.ndarray:
        cached = self._mask_cache.get(state)
        if cached is None:
            cached = np.fromiter(
                (self._advance_token(state, tok) is not None for tok in self._token_strings),
                dtype=bool,
                count=len(self._token_strings),
            )
            cached.setflags(write=False)
            self._mask_cache[state] = cached
        return cached

    def allowed(self, ids: Sequence[int]) -> np.ndarray:
        """Constraint callback: legal next tokens after the ids emitted so far."""
        return self.mask_for_state(self.state_after(ids))

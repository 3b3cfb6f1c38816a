"""Byte-pair-encoding tokenizer for trajectory lines.

Works on characters (every corpus symbol is a single codepoint). Protected
tokens — the bracketed conditioning tokens and the four grammar characters —
are atomic: they are never split, never merged into larger units, and block
merges across their boundaries. Ids are assigned deterministically: protected
tokens first (in their given order), then base characters sorted by
codepoint, then merge products in creation order.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

from .codec import (
    DELIMITER,
    FINAL_HOME_MARK,
    SEPARATOR,
    SPECIAL_TOKENS,
    TEMP_HOME_MARK,
)

#: Spec order: the twenty conditioning tokens, then "|", "_", ",", ".".
DEFAULT_PROTECTED: tuple[str, ...] = SPECIAL_TOKENS + (
    DELIMITER, SEPARATOR, TEMP_HOME_MARK, FINAL_HOME_MARK,
)

VOCAB_MAGIC = "# trajbpe v1"


class TokenizerError(Exception):
    pass


class TargetTooSmallError(TokenizerError):
    """Requested vocabulary smaller than protected + base alphabet."""


class UnknownIdError(TokenizerError):
    """detokenize received an id outside the vocabulary."""


class UnknownSymbolError(TokenizerError):
    """tokenize met a character absent from the base alphabet."""


class VocabFormatError(TokenizerError):
    """Vocabulary file is not in the expected versioned format."""


def _split_protected(text: str, protected: Sequence[str]) -> list[tuple[bool, str]]:
    """Alternating (is_protected, chunk) spans; longest protected match wins."""
    by_len = sorted(set(protected), key=len, reverse=True)
    spans: list[tuple[bool, str]] = []
    plain: list[str] = []
    i = 0
    while i < len(text):
        hit = next((t for t in by_len if text.startswith(t, i)), None)
        if hit is not None:
            if plain:
                spans.append((False, "".join(plain)))
                plain = []
            spans.append((True, hit))
            i += len(hit)
        else:
            plain.append(text[i])
            i += 1
    if plain:
        spans.append((False, "".join(plain)))
    return spans


class BpeTokenizer:
    def __init__(
        self,
        protected: Sequence[str],
        base_chars: Sequence[str],
        merges: Sequence[tuple[str, str]],
    ):
        self.protected = tuple(protected)
        self.base_chars = tuple(base_chars)
        self.merges = tuple(merges)
        self._tokens: list[str] = list(self.protected) + list(self.base_chars)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise VocabFormatError("duplicate token in vocabulary")
        for a, b in self.merges:
            # distinct rules can build the same string (("ab","c") vs ("a","bc"));
            # the surface form keeps its first id
            product = a + b
            if product not in self._ids:
                self._ids[product] = len(self._tokens)
                self._tokens.append(product)
        self._rank = {pair: r for r, pair in enumerate(self.merges)}
        self._protected_set = frozenset(self.protected)
        self._base_set = frozenset(self.base_chars)

    # -- vocabulary ----------------------------------------------------------

    @property
    def vocab_size(self) -> int:
        return len(self._tokens)

    def id_of(self, token: str) -> int:
        if token not in self._ids:
            raise UnknownSymbolError(f"{token!r} is not a vocabulary token")
        return self._ids[token]

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise UnknownIdError(f"id {token_id} outside vocabulary of {len(self._tokens)}")
        return self._tokens[token_id]

    # -- training ------------------------------------------------------------

    @classmethod
    def train(
        cls,
        lines: Iterable[str],
        target_vocab_size: int = 8192,
        protected: Sequence[str] = DEFAULT_PROTECTED,
    ) -> "BpeTokenizer":
        """Greedy highest-frequency pair merging until `target_vocab_size`
        or until no pair occurs at least twice. Frequency ties break toward
        the lexicographically smallest pair, so training is deterministic.
        """
        protected = tuple(protected)
        segment_freq: Counter[tuple[str, ...]] = Counter()
        chars: set[str] = set()
        for line in lines:
            for is_prot, chunk in _split_protected(line, protected):
                if is_prot:
                    continue
                chars.update(chunk)
                segment_freq[tuple(chunk)] += 1
        base_chars = tuple(sorted(chars))
        base_size = len(protected) + len(base_chars)
        if target_vocab_size < base_size:
            raise TargetTooSmallError(
                f"target {target_vocab_size} < protected+base alphabet {base_size}"
            )

        segments: dict[int, tuple[str, ...]] = {}
        freqs: dict[int, int] = {}
        pair_counts: Counter[tuple[str, str]] = Counter()
        where: dict[tuple[str, str], set[int]] = {}
        for sid, (seg, freq) in enumerate(sorted(segment_freq.items())):
            segments[sid] = seg
            freqs[sid] = freq
            for pair in zip(seg, seg[1:]):
                pair_counts[pair] += freq
                where.setdefault(pair, set()).add(sid)

        merges: list[tuple[str, str]] = []
        products: set[str] = set()
        while base_size + len(products) < target_vocab_size and pair_counts:
            best = min(pair_counts, key=lambda p: (-pair_counts[p], p))
            if pair_counts[best] < 2:
                break
            merges.append(best)
            merged = best[0] + best[1]
            products.add(merged)
            for sid in tuple(where.get(best, ())):
                seg, freq = segments[sid], freqs[sid]
                for pair in zip(seg, seg[1:]):
                    pair_counts[pair] -= freq
                    if pair_counts[pair] <= 0:
                        del pair_counts[pair]
                    bucket = where.get(pair)
                    if bucket is not None:
                        bucket.discard(sid)
                        if not bucket:
                            del where[pair]
                new_seg: list[str] = []
                k = 0
                while k < len(seg):
                    if k + 1 < len(seg) and (seg[k], seg[k + 1]) == best:
                        new_seg.append(merged)
                        k += 2
                    else:
                        new_seg.append(seg[k])
                        k += 1
                seg = tuple(new_seg)
                segments[sid] = seg
                for pair in zip(seg, seg[1:]):
                    pair_counts[pair] += freq
                    where.setdefault(pair, set()).add(sid)
        return cls(protected, base_chars, merges)

    # -- encoding ------------------------------------------------------------

    def _encode_plain(self, chunk: str) -> list[str]:
        symbols = list(chunk)
        for ch in symbols:
            if ch not in self._base_set:
                raise UnknownSymbolError(f"character {ch!r} not in base alphabet")
        while len(symbols) > 1:
            ranked = [
                (self._rank[p], i)
                for i, p in enumerate(zip(symbols, symbols[1:]))
                if p in self._rank
            ]
            if not ranked:
                break
            rank, _ = min(ranked)
            a, b = self.merges[rank]
            out: list[str] = []
            k = 0
            while k < len(symbols):
                if k + 1 < len(symbols) and symbols[k] == a and symbols[k + 1] == b:
                    out.append(a + b)
                    k += 2
                else:
                    out.append(symbols[k])
                    k += 1
            symbols = out
        return symbols

    def tokenize(self, text: str) -> list[int]:
        """Apply merges in training order within each unprotected span."""
        ids: list[int] = []
        for is_prot, chunk in _split_protected(text, self.protected):
            if is_prot:
                ids.append(self._ids[chunk])
            else:
                ids.extend(self._ids[tok] for tok in self._encode_plain(chunk))
        return ids

    def detokenize(self, ids: Sequence[int]) -> str:
        return "".join(self.token_of(i) for i in ids)

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        lines = [VOCAB_MAGIC, "[protected]"]
        lines.extend(self.protected)
        lines.append("[base]")
        lines.extend(f"{ord(c):04X}" for c in self.base_chars)
        lines.append("[merges]")
        lines.extend(
            " ".join(f"{ord(c):04X}" for c in a) + "\t" + " ".join(f"{ord(c):04X}" for c in b)
            for a, b in self.merges
        )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BpeTokenizer":
        raw = Path(path).read_text(encoding="utf-8").splitlines()
        if not raw or raw[0] != VOCAB_MAGIC:
            raise VocabFormatError(f"{path}: missing {VOCAB_MAGIC!r} header")
        sections: dict[str, list[str]] = {"protected": [], "base": [], "merges": []}
        current: str | None = None
        for line in raw[1:]:
            if line in ("[protected]", "[base]", "[merges]"):
                current = line[1:-1]
            elif line:
                if current is None:
                    raise VocabFormatError(f"{path}: content before first section")
                sections[current].append(line)

        def decode(hexes: str) -> str:
            return "".join(chr(int(h, 16)) for h in hexes.split())

        try:
            base_chars = [decode(h) for h in sections["base"]]
            merges = [
                (decode(left), decode(right))
                for left, right in (row.split("\t") for row in sections["merges"])
            ]
        except ValueError as err:
            raise VocabFormatError(f"{path}: {err}") from None
        return cls(sections["protected"], base_chars, merges)

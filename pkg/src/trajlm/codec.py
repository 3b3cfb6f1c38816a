"""Spatial-grid and time-interval symbol codec.

Coordinates are encoded on the Japanese recursive regional grid (JIS X 0410
style): a level-1 cell spans 40 minutes of latitude by 1 degree of longitude,
level 2 splits it 8x8, level 3 splits each of those 10x10 (~1 km), and levels
4 and 5 are successive 2x2 quadrant halvings down to ~250 m. Each populated
level index gets a single unique character from a disjoint codepoint range, so
a 250-m cell is written as a 5-character string. Time gaps between stops are
binned on a log-1.5 scale and likewise mapped to single characters.

All subdivision intervals are half-open [low, high).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path


class CodecError(Exception):
    """Base class for codec failures."""


class OutOfBoundsError(CodecError):
    """Point lies outside the configured bounding box (or the globe)."""


class NonPositiveIntervalError(CodecError):
    """Time interval below the 1-minute encoding floor."""


class UnknownCharacterError(CodecError):
    """Character not registered in the alphabet."""


class UnregisteredCellError(CodecError):
    """Cell index has no character and the alphabet is frozen."""


class MalformedCellStringError(CodecError):
    """Cell string violates the per-position level ranges."""


class AlphabetFrozenError(CodecError):
    """Registration attempted on a frozen alphabet."""


class AlphabetRangeExhaustedError(CodecError):
    """A level's codepoint range has no free characters left."""


# Grammar characters reserved by the trajectory line format.
SEPARATOR = "_"
TEMP_HOME_MARK = ","
FINAL_HOME_MARK = "."
DELIMITER = "|"
RESERVED_CHARS = frozenset((SEPARATOR, TEMP_HOME_MARK, FINAL_HOME_MARK, DELIMITER))

# Conditioning vocabulary: 11 environment tokens (4 categories) plus
# 9 attribute tokens (4 categories), always emitted in category order.
DAY_TYPE_TOKENS = ("[Weekday]", "[Weekend]")
TEMP_TOKENS = ("[h<25C]", "[25C<=h<30C]", "[h>=30C]")
WEATHER_TOKENS = ("[Sunny]", "[Cloudy]", "[Rainy]")
COVID_TOKENS = ("[n<20000]", "[20000<=n<30000]", "[n>=30000]")
GENDER_TOKENS = ("[Male]", "[Female]")
AGE_TOKENS = ("[Under29]", "[30to59]", "[Over60]")
HOME_TOKENS = ("[HomeInCity]", "[HomeOutsideCity]")
WORK_TOKENS = ("[WorkInCity]", "[WorkOutsideCity]")

SPECIAL_TOKEN_CATEGORIES: dict[str, tuple[str, ...]] = {
    "day_type": DAY_TYPE_TOKENS,
    "temperature": TEMP_TOKENS,
    "weather": WEATHER_TOKENS,
    "covid": COVID_TOKENS,
    "gender": GENDER_TOKENS,
    "age": AGE_TOKENS,
    "home_city": HOME_TOKENS,
    "work_city": WORK_TOKENS,
}

SPECIAL_TOKENS: tuple[str, ...] = tuple(
    tok for toks in SPECIAL_TOKEN_CATEGORIES.values() for tok in toks
)

_LN15 = math.log(1.5)
# Upward nudge before floor keeps exact powers of 1.5 on the upper bin.
_BIN_EPS = 1e-9

# Disjoint private-use codepoint ranges, one per grid level plus one for
# interval bins. Level 1 is open-ended in principle (one cell per 40'x1deg
# block on land) so it gets the big range.
_LEVEL_RANGE: dict[object, tuple[int, int]] = {
    1: (0xE000, 2048),
    2: (0xE800, 64),
    3: (0xE840, 100),
    4: (0xE8A4, 4),
    5: (0xE8A8, 4),
    "R": (0xE8C0, 64),
}


@dataclass(frozen=True)
class GeoPoint:
    """WGS84 coordinate in decimal degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise OutOfBoundsError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise OutOfBoundsError(f"coordinate off-globe ({self.lat}, {self.lon})")


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def contains(self, point: GeoPoint) -> bool:
        return (
            self.lat_min <= point.lat < self.lat_max
            and self.lon_min <= point.lon < self.lon_max
        )


#: Default working area: Japan and surrounding waters.
JAPAN_BBOX = BoundingBox(20.0, 46.0, 122.0, 154.0)

# Per-degree subdivision counts: latitude uses 1.5 level-1 cells per degree,
# longitude 1.0; each level-1 cell splits 8 -> 10 -> 2 -> 2 below that.
_SUBCELLS = 8 * 10 * 2 * 2  # level-5 cells per level-1 cell, per axis
_SPAN_AT_LEVEL = {1: 320, 2: 40, 3: 4, 4: 2, 5: 1}


@dataclass(frozen=True)
class GridCode:
    """Populated recursive-grid indices down to `level`.

    p/u are the level-1 latitude/longitude indices (floor(lat*1.5) and
    floor(lon)-100), q/v the 8x8 level-2 indices, e/f the 10x10 level-3
    indices, and q4/q5 the quadrant numbers (1=SW, 2=SE, 3=NW, 4=NE).
    """

    p: int
    u: int
    level: int = 1
    q: int | None = None
    v: int | None = None
    e: int | None = None
    f: int | None = None
    q4: int | None = None
    q5: int | None = None

    def __post_init__(self):
        if not 1 <= self.level <= 5:
            raise CodecError(f"level must be 1..5, got {self.level}")
        needed = {
            2: ("q", "v"),
            3: ("e", "f"),
            4: ("q4",),
            5: ("q5",),
        }
        for lvl, names in needed.items():
            for name in names:
                value = getattr(self, name)
                if lvl <= self.level:
                    if value is None:
                        raise CodecError(f"{name} required at level {self.level}")
                elif value is not None:
                    raise CodecError(f"{name} populated beyond level {self.level}")
        if self.level >= 2 and not (0 <= self.q <= 7 and 0 <= self.v <= 7):
            raise CodecError(f"level-2 indices out of range: q={self.q} v={self.v}")
        if self.level >= 3 and not (0 <= self.e <= 9 and 0 <= self.f <= 9):
            raise CodecError(f"level-3 indices out of range: e={self.e} f={self.f}")
        if self.level >= 4 and not 1 <= self.q4 <= 4:
            raise CodecError(f"q4 out of range: {self.q4}")
        if self.level == 5 and not 1 <= self.q5 <= 4:
            raise CodecError(f"q5 out of range: {self.q5}")

    def level_key(self, level: int) -> tuple[int, ...]:
        """Index tuple identifying this code's sub-cell at one level."""
        if level > self.level:
            raise CodecError(f"level {level} beyond populated level {self.level}")
        return {
            1: (self.p, self.u),
            2: (self.q, self.v),
            3: (self.e, self.f),
            4: (self.q4,),
            5: (self.q5,),
        }[level]

    def truncated(self, level: int) -> "GridCode":
        """Copy of this code cut down to a coarser level."""
        if level > self.level:
            raise CodecError(f"cannot extend level {self.level} to {level}")
        fields = {"p": self.p, "u": self.u, "level": level}
        if level >= 2:
            fields.update(q=self.q, v=self.v)
        if level >= 3:
            fields.update(e=self.e, f=self.f)
        if level >= 4:
            fields.update(q4=self.q4)
        if level >= 5:
            fields.update(q5=self.q5)
        return GridCode(**fields)

    def index_tuple(self) -> tuple[int, ...]:
        """All populated indices in level order (for tie-breaking/sorting)."""
        out: list[int] = []
        for lvl in range(1, self.level + 1):
            out.extend(self.level_key(lvl))
        return tuple(out)


@dataclass(frozen=True)
class IntervalToken:
    tau: int
    char: str


def encode_cell(point: GeoPoint, level: int = 5, bbox: BoundingBox = JAPAN_BBOX) -> GridCode:
    """Encode a point into recursive-grid indices down to `level`.

    A single floor at level-5 granularity is decomposed by integer divmod,
    which is exact and avoids accumulating float error across levels.
    """
    if not 1 <= level <= 5:
        raise CodecError(f"level must be 1..5, got {level}")
    if not bbox.contains(point):
        raise OutOfBoundsError(
            f"({point.lat}, {point.lon}) outside box "
            f"[{bbox.lat_min},{bbox.lat_max})x[{bbox.lon_min},{bbox.lon_max})"
        )
    iy = math.floor(point.lat * 1.5 * _SUBCELLS)
    ix = math.floor((point.lon - 100.0) * _SUBCELLS)
    p, ry = divmod(iy, 320)
    u, rx = divmod(ix, 320)
    fields: dict = {"p": p, "u": u, "level": level}
    if level >= 2:
        q, ry = divmod(ry, 40)
        v, rx = divmod(rx, 40)
        fields.update(q=q, v=v)
    if level >= 3:
        e, ry = divmod(ry, 4)
        f, rx = divmod(rx, 4)
        fields.update(e=e, f=f)
    if level >= 4:
        b4y, ry = divmod(ry, 2)
        b4x, rx = divmod(rx, 2)
        fields.update(q4=1 + b4x + 2 * b4y)
    if level == 5:
        fields.update(q5=1 + rx + 2 * ry)
    return GridCode(**fields)


def _scaled_origin(code: GridCode) -> tuple[int, int, int]:
    """South-west corner in level-5 index units plus the cell span."""
    iy = code.p * 320
    ix = code.u * 320
    if code.level >= 2:
        iy += code.q * 40
        ix += code.v * 40
    if code.level >= 3:
        iy += code.e * 4
        ix += code.f * 4
    if code.level >= 4:
        iy += ((code.q4 - 1) // 2) * 2
        ix += ((code.q4 - 1) % 2) * 2
    if code.level == 5:
        iy += (code.q5 - 1) // 2
        ix += (code.q5 - 1) % 2
    return iy, ix, _SPAN_AT_LEVEL[code.level]


def cell_bounds(code: GridCode) -> tuple[float, float, float, float]:
    """(lat_lo, lat_hi, lon_lo, lon_hi) of the cell at its populated level."""
    iy, ix, span = _scaled_origin(code)
    lat_lo = Fraction(iy, 480)
    lat_hi = Fraction(iy + span, 480)
    lon_lo = 100 + Fraction(ix, 320)
    lon_hi = 100 + Fraction(ix + span, 320)
    return float(lat_lo), float(lat_hi), float(lon_lo), float(lon_hi)


def decode_center(code: GridCode) -> GeoPoint:
    """Center of the cell; encode_cell(decode_center(c), c.level) == c."""
    iy, ix, span = _scaled_origin(code)
    lat = float(Fraction(2 * iy + span, 960))
    lon = float(100 + Fraction(2 * ix + span, 640))
    return GeoPoint(lat, lon)


def tau_of_minutes(dt: float) -> int:
    """Log-1.5 bin index of a time interval: bins are [1.5^(k-1), 1.5^k)."""
    if not (isinstance(dt, (int, float)) and math.isfinite(dt)) or dt < 1:
        raise NonPositiveIntervalError(f"interval must be >= 1 minute, got {dt!r}")
    return math.floor(math.log(dt) / _LN15 + _BIN_EPS) + 1


def representative_minutes(tau: int, floor_minutes: int = 10) -> int:
    """Clock minutes standing in for a bin: geometric midpoint, data-floor clamped."""
    if tau < 1:
        raise NonPositiveIntervalError(f"tau must be >= 1, got {tau}")
    mid = 1.5 ** (tau - 0.5)
    return max(floor_minutes, int(round(mid)))


def level_range_of_char(ch: str):
    """Which reserved codepoint range a character falls in: 1..5, 'R', or None."""
    cp = ord(ch)
    for level, (start, size) in _LEVEL_RANGE.items():
        if start <= cp < start + size:
            return level
    return None


class TrajectoryAlphabet:
    """Registration-ordered character tables for grid levels and interval bins.

    Characters are allocated first-come-first-served from disjoint private-use
    ranges, so cross-level collisions are impossible by construction. Freeze
    the alphabet before tokenizer training; lookups of unseen indices then
    raise instead of allocating.
    """

    _FORMAT = "trajvocab"
    _VERSION = 1

    def __init__(self, bbox: BoundingBox = JAPAN_BBOX):
        self.bbox = bbox
        self._tables: dict[object, dict[tuple[int, ...], str]] = {
            key: {} for key in _LEVEL_RANGE
        }
        self._by_char: dict[str, tuple[object, tuple[int, ...]]] = {}
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> None:
        self._frozen = True

    def size(self, level) -> int:
        return len(self._tables[level])

    def chars(self, level) -> set[str]:
        return set(self._tables[level].values())

    def _lookup(self, level, key: tuple[int, ...]) -> str:
        table = self._tables[level]
        ch = table.get(key)
        if ch is not None:
            return ch
        if self._frozen:
            raise UnregisteredCellError(f"level {level} index {key} not registered")
        start, size = _LEVEL_RANGE[level]
        if len(table) >= size:
            raise AlphabetRangeExhaustedError(
                f"level {level} range full ({size} characters)"
            )
        ch = chr(start + len(table))
        table[key] = ch
        self._by_char[ch] = (level, key)
        return ch

    def cell_to_chars(self, code: GridCode) -> str:
        """One character per populated level, registering new indices unless frozen."""
        return "".join(
            self._lookup(lvl, code.level_key(lvl)) for lvl in range(1, code.level + 1)
        )

    def chars_to_cell(self, chars: str) -> GridCode:
        """Inverse of cell_to_chars; validates per-position level membership."""
        if not 1 <= len(chars) <= 5:
            raise MalformedCellStringError(f"cell string length {len(chars)} not in 1..5")
        fields: dict = {"level": len(chars)}
        names = {1: ("p", "u"), 2: ("q", "v"), 3: ("e", "f"), 4: ("q4",), 5: ("q5",)}
        for pos, ch in enumerate(chars, start=1):
            rng = level_range_of_char(ch)
            if rng != pos:
                raise MalformedCellStringError(
                    f"position {pos} char U+{ord(ch):04X} belongs to range {rng!r}"
                )
            info = self._by_char.get(ch)
            if info is None:
                raise UnknownCharacterError(f"U+{ord(ch):04X} not in alphabet")
            _, key = info
            for name, value in zip(names[pos], key):
                fields[name] = value
        return GridCode(**fields)

    def interval_char(self, tau: int) -> str:
        if tau < 1:
            raise NonPositiveIntervalError(f"tau must be >= 1, got {tau}")
        return self._lookup("R", (tau,))

    def char_to_tau(self, ch: str) -> int:
        if level_range_of_char(ch) != "R":
            raise MalformedCellStringError(f"U+{ord(ch):04X} is not an interval character")
        info = self._by_char.get(ch)
        if info is None:
            raise UnknownCharacterError(f"U+{ord(ch):04X} not in alphabet")
        return info[1][0]

    def discretize_interval(self, dt: float) -> IntervalToken:
        tau = tau_of_minutes(dt)
        return IntervalToken(tau=tau, char=self.interval_char(tau))

    def all_chars(self) -> set[str]:
        return set(self._by_char)

    # --- sidecar persistence -------------------------------------------------

    def save(self, path: str | Path) -> None:
        """One line per entry: level<TAB>index-tuple<TAB>codepoint(hex)."""
        lines = [
            f"# {self._FORMAT} v{self._VERSION} "
            f"bbox={self.bbox.lat_min},{self.bbox.lat_max},"
            f"{self.bbox.lon_min},{self.bbox.lon_max} "
            f"frozen={int(self._frozen)}"
        ]
        for level in (1, 2, 3, 4, 5, "R"):
            for key, ch in self._tables[level].items():
                idx = ",".join(str(i) for i in key)
                lines.append(f"{level}\t{idx}\t{ord(ch):04X}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TrajectoryAlphabet":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.splitlines()
        if not lines or not lines[0].startswith(f"# {cls._FORMAT} v"):
            raise CodecError(f"{path}: not a {cls._FORMAT} file")
        header = lines[0].split()
        version = int(header[2][1:])
        if version != cls._VERSION:
            raise CodecError(f"{path}: unsupported version {version}")
        fields = dict(part.split("=", 1) for part in header[3:])
        lo_lat, hi_lat, lo_lon, hi_lon = (float(x) for x in fields["bbox"].split(","))
        alphabet = cls(BoundingBox(lo_lat, hi_lat, lo_lon, hi_lon))
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            level_s, idx_s, cp_s = line.split("\t")
            level: object = int(level_s) if level_s != "R" else "R"
            key = tuple(int(i) for i in idx_s.split(","))
            ch = chr(int(cp_s, 16))
            expected = alphabet._lookup(level, key)
            if expected != ch:
                raise CodecError(
                    f"{path}:{lineno}: character U+{int(cp_s, 16):04X} breaks "
                    f"registration order (expected U+{ord(expected):04X})"
                )
        if fields.get("frozen") == "1":
            alphabet.freeze()
        return alphabet

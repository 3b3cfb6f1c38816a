"""Raw ping ingestion and the trajectory line format.

A day away from home becomes one text line. Conditioning tokens (if any)
come first in fixed category order, then the delimiter, then the first stop's
cell string, then one "_" + interval-char + cell-string group per later stop.
A "," marks a stop followed by a temporary return home; the final stop is
always terminated by ".":

    [Weekend][h>=30C]...|<cell>_<r><cell>,_<r><cell>.

Attributes whose value is unknown emit no token at all. Plain (unconditioned)
lines omit the token prefix and the delimiter.
"""

from __future__ import annotations

import csv
import io
import json
import random
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path

from .codec import (
    AGE_TOKENS,
    COVID_TOKENS,
    DAY_TYPE_TOKENS,
    DELIMITER,
    FINAL_HOME_MARK,
    GENDER_TOKENS,
    HOME_TOKENS,
    JAPAN_BBOX,
    SEPARATOR,
    TEMP_HOME_MARK,
    TEMP_TOKENS,
    WEATHER_TOKENS,
    WORK_TOKENS,
    BoundingBox,
    GeoPoint,
    OutOfBoundsError,
    TrajectoryAlphabet,
    decode_center,
    encode_cell,
    level_range_of_char,
    representative_minutes,
    tau_of_minutes,
)

UNKNOWN = "unknown"

#: Hard floor of the interval distribution in the source data, minutes.
MIN_INTERVAL_MINUTES = 10

PING_CSV_HEADER = [
    "device_id", "timestamp", "lat", "lon", "gender", "age", "home_area", "work_area",
]
ENV_CSV_HEADER = ["date", "day_type", "temp_c", "weather", "covid_count"]


class CorpusError(Exception):
    pass


class IngestError(CorpusError):
    """Malformed-row fraction exceeded the abort threshold."""


class NoNightDataError(CorpusError):
    """Device has no pings in the night window; home cannot be inferred."""


class MalformedLineError(CorpusError):
    """Trajectory line violates the grammar; message carries the position."""


class HomeFlag(str, Enum):
    NOT_HOME = "not_home"
    TEMP_HOME = "temp_home"
    FINAL_HOME = "final_home"


@dataclass(frozen=True)
class AttributeSet:
    gender: str = UNKNOWN
    age_band: str = UNKNOWN
    home_in_city: str = UNKNOWN
    work_in_city: str = UNKNOWN

    def tokens(self) -> list[str]:
        """Attribute tokens in category order; unknown fields emit nothing."""
        out = []
        if self.gender == "Male":
            out.append(GENDER_TOKENS[0])
        elif self.gender == "Female":
            out.append(GENDER_TOKENS[1])
        if self.age_band in ("Under29", "30to59", "Over60"):
            out.append(f"[{self.age_band}]")
        if self.home_in_city == "yes":
            out.append(HOME_TOKENS[0])
        elif self.home_in_city == "no":
            out.append(HOME_TOKENS[1])
        if self.work_in_city == "yes":
            out.append(WORK_TOKENS[0])
        elif self.work_in_city == "no":
            out.append(WORK_TOKENS[1])
        return out


@dataclass(frozen=True)
class EnvironmentSet:
    day_type: str  # Weekday | Weekend
    temp_band: str  # lt25 | 25to30 | ge30
    weather: str  # Sunny | Cloudy | Rainy
    covid_band: str  # lt20000 | 20to30000 | ge30000

    @classmethod
    def from_raw(cls, day_type: str, temp_c: float, weather: str, covid_count: int):
        if day_type not in ("Weekday", "Weekend"):
            raise CorpusError(f"bad day_type {day_type!r}")
        if weather not in ("Sunny", "Cloudy", "Rainy"):
            raise CorpusError(f"bad weather {weather!r}")
        temp_band = "lt25" if temp_c < 25 else ("25to30" if temp_c < 30 else "ge30")
        covid_band = (
            "lt20000" if covid_count < 20000
            else ("20to30000" if covid_count < 30000 else "ge30000")
        )
        return cls(day_type, temp_band, weather, covid_band)

    def tokens(self) -> list[str]:
        return [
            DAY_TYPE_TOKENS[0] if self.day_type == "Weekday" else DAY_TYPE_TOKENS[1],
            {"lt25": TEMP_TOKENS[0], "25to30": TEMP_TOKENS[1], "ge30": TEMP_TOKENS[2]}[self.temp_band],
            {"Sunny": WEATHER_TOKENS[0], "Cloudy": WEATHER_TOKENS[1], "Rainy": WEATHER_TOKENS[2]}[self.weather],
            {"lt20000": COVID_TOKENS[0], "20to30000": COVID_TOKENS[1], "ge30000": COVID_TOKENS[2]}[self.covid_band],
        ]


# token -> (field owner, field name, value) for the parser
_TOKEN_FIELD: dict[str, tuple[str, str, str]] = {}
for _tok, _val in zip(DAY_TYPE_TOKENS, ("Weekday", "Weekend")):
    _TOKEN_FIELD[_tok] = ("env", "day_type", _val)
for _tok, _val in zip(TEMP_TOKENS, ("lt25", "25to30", "ge30")):
    _TOKEN_FIELD[_tok] = ("env", "temp_band", _val)
for _tok, _val in zip(WEATHER_TOKENS, ("Sunny", "Cloudy", "Rainy")):
    _TOKEN_FIELD[_tok] = ("env", "weather", _val)
for _tok, _val in zip(COVID_TOKENS, ("lt20000", "20to30000", "ge30000")):
    _TOKEN_FIELD[_tok] = ("env", "covid_band", _val)
for _tok, _val in zip(GENDER_TOKENS, ("Male", "Female")):
    _TOKEN_FIELD[_tok] = ("attrs", "gender", _val)
for _tok, _val in zip(AGE_TOKENS, ("Under29", "30to59", "Over60")):
    _TOKEN_FIELD[_tok] = ("attrs", "age_band", _val)
for _tok, _val in zip(HOME_TOKENS, ("yes", "no")):
    _TOKEN_FIELD[_tok] = ("attrs", "home_in_city", _val)
for _tok, _val in zip(WORK_TOKENS, ("yes", "no")):
    _TOKEN_FIELD[_tok] = ("attrs", "work_in_city", _val)


@dataclass(frozen=True)
class PingRecord:
    device_id: str
    timestamp: datetime
    point: GeoPoint
    attrs: AttributeSet | None = None


@dataclass(frozen=True)
class Stop:
    cell: str  # cell characters, one per grid level
    offset: int  # minutes after the day's first away arrival
    flag: HomeFlag = HomeFlag.NOT_HOME


@dataclass(frozen=True)
class DayTrajectory:
    t0: int  # minutes since midnight of the first away arrival
    stops: tuple[Stop, ...]
    device_id: str = ""
    date: str = ""  # ISO yyyy-mm-dd

    def __post_init__(self):
        if not self.stops:
            raise CorpusError("trajectory needs at least one stop")
        if self.stops[0].offset != 0:
            raise CorpusError("first stop offset must be 0")
        for a, b in zip(self.stops, self.stops[1:]):
            if b.offset <= a.offset:
                raise CorpusError("stop offsets must be strictly increasing")
        for stop in self.stops[:-1]:
            if stop.flag == HomeFlag.FINAL_HOME:
                raise CorpusError("final_home allowed only on the last stop")
        if self.stops[-1].flag == HomeFlag.TEMP_HOME:
            raise CorpusError("last stop cannot be temp_home")

    def gaps(self) -> list[int]:
        return [b.offset - a.offset for a, b in zip(self.stops, self.stops[1:])]


@dataclass(frozen=True)
class SplitManifest:
    train: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def save(self, path: str | Path) -> None:
        lines = [f"# trajsplit v1 seed={self.seed}", "[train]"]
        lines.extend(self.train)
        lines.append("[test]")
        lines.extend(self.test)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SplitManifest":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("# trajsplit v1"):
            raise CorpusError(f"{path}: not a split manifest")
        seed = int(lines[0].split("seed=")[1])
        sections: dict[str, list[str]] = {"train": [], "test": []}
        current = None
        for line in lines[1:]:
            if line in ("[train]", "[test]"):
                current = line[1:-1]
            elif line.strip():
                sections[current].append(line.strip())
        return cls(tuple(sections["train"]), tuple(sections["test"]), seed)


@dataclass
class IngestSummary:
    rows_total: int = 0
    rows_malformed: int = 0
    rows_deduped: int = 0
    devices: int = 0


def _parse_attr_row(gender: str, age: str, home_area: str, work_area: str) -> AttributeSet:
    """Lenient attribute parsing: anything unrecognized is unknown."""
    g = gender.strip().capitalize() if gender.strip() else UNKNOWN
    if g not in ("Male", "Female"):
        g = UNKNOWN
    a = age.strip()
    if a in ("Under29", "30to59", "Over60"):
        band = a
    elif a.isdigit():
        n = int(a)
        band = "Under29" if n <= 29 else ("30to59" if n <= 59 else "Over60")
    else:
        band = UNKNOWN

    def yes_no(s: str) -> str:
        s = s.strip().lower()
        return s if s in ("yes", "no") else UNKNOWN

    return AttributeSet(g, band, yes_no(home_area), yes_no(work_area))


def ingest(
    source: str | Path | io.TextIOBase,
    bbox: BoundingBox = JAPAN_BBOX,
    abort_malformed_fraction: float = 0.10,
) -> tuple[dict[str, list[PingRecord]], dict[str, AttributeSet], IngestSummary]:
    """Read a ping CSV into per-device, time-sorted, deduplicated streams.

    Rows with broken timestamps/coordinates (including out-of-box points)
    are counted and skipped; more than `abort_malformed_fraction` of them
    aborts the run. After sorting, pings sharing a minute collapse to the
    first occurrence (the stated rule is same-minute-same-cell, but one ping
    per minute is also required for strictly increasing timestamps).
    """
    close = False
    if isinstance(source, (str, Path)):
        stream: io.TextIOBase = open(source, newline="", encoding="utf-8")
        close = True
    else:
        stream = source
    summary = IngestSummary()
    raw: dict[str, list[PingRecord]] = {}
    attrs: dict[str, AttributeSet] = {}
    try:
        reader = csv.reader(stream)
        header = next(reader, None)
        if header != PING_CSV_HEADER:
            raise IngestError(f"bad header: expected {PING_CSV_HEADER}, got {header}")
        for row in reader:
            if not row:
                continue
            summary.rows_total += 1
            try:
                device, ts_s, lat_s, lon_s, gender, age, home_a, work_a = row
                ts = datetime.strptime(ts_s, "%Y-%m-%dT%H:%M")
                point = GeoPoint(float(lat_s), float(lon_s))
                if not bbox.contains(point):
                    raise OutOfBoundsError(f"({point.lat}, {point.lon}) outside box")
            except (ValueError, OutOfBoundsError):
                summary.rows_malformed += 1
                continue
            record = PingRecord(device, ts, point, _parse_attr_row(gender, age, home_a, work_a))
            raw.setdefault(device, []).append(record)
            current = attrs.get(device, AttributeSet())
            merged = {
                f: getattr(current, f) if getattr(current, f) != UNKNOWN else getattr(record.attrs, f)
                for f in ("gender", "age_band", "home_in_city", "work_in_city")
            }
            attrs[device] = AttributeSet(**merged)
    finally:
        if close:
            stream.close()
    if summary.rows_total and summary.rows_malformed > abort_malformed_fraction * summary.rows_total:
        raise IngestError(
            f"{summary.rows_malformed}/{summary.rows_total} rows malformed "
            f"(> {abort_malformed_fraction:.0%} threshold)"
        )

    pings: dict[str, list[PingRecord]] = {}
    for device in sorted(raw):
        records = sorted(raw[device], key=lambda r: r.timestamp)
        kept: list[PingRecord] = []
        for record in records:
            if kept and record.timestamp == kept[-1].timestamp:
                summary.rows_deduped += 1
                continue
            kept.append(record)
        pings[device] = kept
    summary.devices = len(pings)
    return pings, attrs, summary


def infer_home(pings: list[PingRecord], bbox: BoundingBox = JAPAN_BBOX) -> GeoPoint:
    """Center of the modal night-time (00:00-06:00) 250-m cell.

    Ties break toward the lexicographically smallest cell index tuple.
    """
    counts: dict[tuple[int, ...], int] = {}
    codes: dict[tuple[int, ...], object] = {}
    for record in pings:
        if record.timestamp.hour < 6:
            code = encode_cell(record.point, 5, bbox)
            key = code.index_tuple()
            counts[key] = counts.get(key, 0) + 1
            codes[key] = code
    if not counts:
        raise NoNightDataError("no pings in [00:00, 06:00)")
    best = min(counts, key=lambda k: (-counts[k], k))
    return decode_center(codes[best])


def privacy_filter(
    pings: list[PingRecord], home: GeoPoint, radius_m: float = 100.0
) -> tuple[list[PingRecord], list[datetime]]:
    """Drop pings within `radius_m` of home; their timestamps become markers."""
    from .evaluation import haversine_km

    kept: list[PingRecord] = []
    markers: list[datetime] = []
    for record in pings:
        if haversine_km(record.point, home) * 1000.0 <= radius_m:
            markers.append(record.timestamp)
        else:
            kept.append(record)
    return kept, markers


def segment_days(
    pings: list[PingRecord],
    markers: list[datetime],
    alphabet: TrajectoryAlphabet,
    device_id: str = "",
    bbox: BoundingBox = JAPAN_BBOX,
    min_gap: int = MIN_INTERVAL_MINUTES,
    level: int = 5,
) -> list[DayTrajectory]:
    """One trajectory per civil day with at least two away stops.

    A home-visit marker flags the latest earlier stop of its day as a
    temporary return; the last stop of every day carries the final-return
    flag (days that never return still end the sequence). Pings closer than
    `min_gap` minutes to the previous kept stop are dropped to keep every
    gap at or above the data floor.
    """
    by_date: dict[str, list[PingRecord]] = {}
    for record in pings:
        by_date.setdefault(record.timestamp.date().isoformat(), []).append(record)
    markers_by_date: dict[str, list[datetime]] = {}
    for ts in markers:
        markers_by_date.setdefault(ts.date().isoformat(), []).append(ts)

    days: list[DayTrajectory] = []
    for date in sorted(by_date):
        records = by_date[date]
        kept: list[PingRecord] = []
        for record in records:
            if kept:
                gap = (record.timestamp - kept[-1].timestamp).total_seconds() / 60.0
                if gap < min_gap:
                    continue
            kept.append(record)
        if len(kept) < 2:
            continue
        base = kept[0].timestamp
        t0 = base.hour * 60 + base.minute
        times = [int((r.timestamp - base).total_seconds() // 60) for r in kept]
        flags = [HomeFlag.NOT_HOME] * len(kept)
        for marker in markers_by_date.get(date, ()):
            moment = (marker - base).total_seconds() / 60.0
            idx = None
            for i, t in enumerate(times):
                if t < moment:
                    idx = i
                else:
                    break
            if idx is not None and idx < len(kept) - 1:
                flags[idx] = HomeFlag.TEMP_HOME
        flags[-1] = HomeFlag.FINAL_HOME
        stops = tuple(
            Stop(alphabet.cell_to_chars(encode_cell(r.point, level, bbox)), t, f)
            for r, t, f in zip(kept, times, flags)
        )
        days.append(DayTrajectory(t0=t0, stops=stops, device_id=device_id, date=date))
    return days


def serialize(
    day: DayTrajectory,
    alphabet: TrajectoryAlphabet,
    env: EnvironmentSet | None = None,
    attrs: AttributeSet | None = None,
) -> str:
    """Render one trajectory line; conditioning tokens only when env is given."""
    parts: list[str] = []
    specials: list[str] = []
    if env is not None:
        specials.extend(env.tokens())
        specials.extend((attrs or AttributeSet()).tokens())
    elif attrs is not None:
        specials.extend(attrs.tokens())
    if specials:
        parts.extend(specials)
        parts.append(DELIMITER)
    parts.append(day.stops[0].cell)
    if day.stops[0].flag == HomeFlag.TEMP_HOME:
        parts.append(TEMP_HOME_MARK)
    for prev, stop in zip(day.stops, day.stops[1:]):
        parts.append(SEPARATOR)
        parts.append(alphabet.interval_char(tau_of_minutes(stop.offset - prev.offset)))
        parts.append(stop.cell)
        if stop.flag == HomeFlag.TEMP_HOME:
            parts.append(TEMP_HOME_MARK)
    parts.append(FINAL_HOME_MARK)
    return "".join(parts)


def parse(
    line: str,
    alphabet: TrajectoryAlphabet,
    repr_floor: int = MIN_INTERVAL_MINUTES,
) -> tuple[EnvironmentSet | None, AttributeSet, DayTrajectory]:
    """Inverse of serialize. Offsets are rebuilt from representative minutes.

    Conditioning tokens are accepted in any order; absent attribute tokens
    yield unknown fields; a line without tokens and delimiter parses with
    env=None. Grammar violations raise MalformedLineError with the position.
    """
    env_fields: dict[str, str] = {}
    attr_fields: dict[str, str] = {}
    pos = 0

    def fail(msg: str):
        raise MalformedLineError(f"position {pos}: {msg}")

    saw_special = False
    while pos < len(line) and line[pos] == "[":
        end = line.find("]", pos)
        if end < 0:
            fail("unterminated special token")
        token = line[pos : end + 1]
        info = _TOKEN_FIELD.get(token)
        if info is None:
            fail(f"unknown special token {token!r}")
        owner, name, value = info
        target = env_fields if owner == "env" else attr_fields
        if name in target:
            fail(f"duplicate token for {name}")
        target[name] = value
        saw_special = True
        pos = end + 1
    if saw_special:
        if pos >= len(line) or line[pos] != DELIMITER:
            fail(f"expected {DELIMITER!r} after special tokens")
        pos += 1
    elif pos < len(line) and line[pos] == DELIMITER:
        pos += 1  # tolerated: empty conditioning prefix

    env = None
    if env_fields:
        missing = {"day_type", "temp_band", "weather", "covid_band"} - set(env_fields)
        if missing:
            fail(f"incomplete environment tokens (missing {sorted(missing)})")
        env = EnvironmentSet(**env_fields)
    attrs = AttributeSet(**attr_fields)

    def read_cell() -> str:
        nonlocal pos
        start = pos
        expected = 1
        while pos < len(line) and level_range_of_char(line[pos]) == expected:
            pos += 1
            expected += 1
        if pos == start:
            got = repr(line[pos]) if pos < len(line) else "end of line"
            fail(f"expected a cell character, got {got}")
        return line[start:pos]

    stops: list[tuple[str, int, HomeFlag]] = []
    offset = 0
    cell = read_cell()
    flag = HomeFlag.NOT_HOME
    if pos < len(line) and line[pos] == TEMP_HOME_MARK:
        flag = HomeFlag.TEMP_HOME
        pos += 1
    stops.append((cell, 0, flag))
    while True:
        if pos >= len(line):
            fail(f"missing terminal {FINAL_HOME_MARK!r}")
        ch = line[pos]
        if ch == FINAL_HOME_MARK:
            pos += 1
            break
        if ch != SEPARATOR:
            fail(f"expected {SEPARATOR!r} or {FINAL_HOME_MARK!r}, got {ch!r}")
        pos += 1
        if pos >= len(line) or level_range_of_char(line[pos]) != "R":
            got = repr(line[pos]) if pos < len(line) else "end of line"
            fail(f"expected an interval character, got {got}")
        tau = alphabet.char_to_tau(line[pos])
        pos += 1
        cell = read_cell()
        flag = HomeFlag.NOT_HOME
        if pos < len(line) and line[pos] == TEMP_HOME_MARK:
            flag = HomeFlag.TEMP_HOME
            pos += 1
        offset += representative_minutes(tau, repr_floor)
        stops.append((cell, offset, flag))
    if pos != len(line):
        fail("trailing characters after terminal mark")
    if stops[-1][2] == HomeFlag.TEMP_HOME:
        fail("final stop cannot carry the temporary-return mark")
    final = stops[-1]
    stop_objs = tuple(
        [Stop(c, o, f) for c, o, f in stops[:-1]]
        + [Stop(final[0], final[1], HomeFlag.FINAL_HOME)]
    )
    for cell_str, _, _ in stops:
        alphabet.chars_to_cell(cell_str)  # validates registration
    return env, attrs, DayTrajectory(t0=0, stops=stop_objs)


def split(device_ids, seed: int, ratio: tuple[int, int] = (4, 1)) -> SplitManifest:
    """Deterministic device-level split at ratio[0]:ratio[1]."""
    ids = sorted(device_ids)
    rng = random.Random(seed)
    rng.shuffle(ids)
    n_train = round(len(ids) * ratio[0] / (ratio[0] + ratio[1]))
    return SplitManifest(tuple(ids[:n_train]), tuple(ids[n_train:]), seed)


def parse_environment_csv(source: str | Path | io.TextIOBase) -> dict[str, EnvironmentSet]:
    close = False
    if isinstance(source, (str, Path)):
        stream: io.TextIOBase = open(source, newline="", encoding="utf-8")
        close = True
    else:
        stream = source
    try:
        reader = csv.reader(stream)
        header = next(reader, None)
        if header != ENV_CSV_HEADER:
            raise CorpusError(f"bad header: expected {ENV_CSV_HEADER}, got {header}")
        table: dict[str, EnvironmentSet] = {}
        for row in reader:
            if not row:
                continue
            date, day_type, temp_s, weather, covid_s = row
            table[date] = EnvironmentSet.from_raw(day_type, float(temp_s), weather, int(covid_s))
        return table
    finally:
        if close:
            stream.close()


# --- day-record sidecar (exact offsets survive; lines alone are lossy) -------

def write_day_records(days: list[DayTrajectory], envs, attrs_by_device, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for day in days:
            env = envs.get(day.date) if envs else None
            attrs = attrs_by_device.get(day.device_id) if attrs_by_device else None
            record = {
                "device": day.device_id,
                "date": day.date,
                "t0": day.t0,
                "stops": [[s.cell, s.offset, s.flag.value] for s in day.stops],
                "env": None if env is None else vars(env),
                "attrs": None if attrs is None else vars(attrs),
            }
            fh.write(json.dumps(record, ensure_ascii=True, sort_keys=True) + "\n")


def read_day_records(path: str | Path):
    """List of (DayTrajectory, EnvironmentSet | None, AttributeSet) per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            day = DayTrajectory(
                t0=rec["t0"],
                stops=tuple(Stop(c, o, HomeFlag(f)) for c, o, f in rec["stops"]),
                device_id=rec["device"],
                date=rec["date"],
            )
            env = EnvironmentSet(**rec["env"]) if rec["env"] else None
            attrs = AttributeSet(**rec["attrs"]) if rec["attrs"] else AttributeSet()
            out.append((day, env, attrs))
    return out


@dataclass
class CorpusBuildResult:
    out_dir: Path
    n_devices: int
    n_dropped_no_night: int
    n_train_lines: int
    n_test_lines: int
    alphabet: TrajectoryAlphabet
    manifest: SplitManifest


def build_corpus(
    ping_csv: str | Path,
    env_csv: str | Path | None,
    out_dir: str | Path,
    seed: int,
    bbox: BoundingBox = JAPAN_BBOX,
    conditioning: bool = True,
    level: int = 5,
    min_gap: int = MIN_INTERVAL_MINUTES,
    home_radius_m: float = 100.0,
) -> CorpusBuildResult:
    """Full corpus pipeline: homes -> privacy filter -> days -> lines -> split.

    Writes alphabet.tsv, corpus_{train,test}.txt, days_{train,test}.jsonl,
    split.txt and summary.json into `out_dir`. Deterministic for a fixed
    input + seed: devices are processed in sorted order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pings, device_attrs, summary = ingest(ping_csv, bbox)
    envs = parse_environment_csv(env_csv) if env_csv else {}
    if conditioning and not envs:
        raise CorpusError("conditioning requested but no environment table given")

    alphabet = TrajectoryAlphabet(bbox)
    days_by_device: dict[str, list[DayTrajectory]] = {}
    dropped_no_night = 0
    for device in sorted(pings):
        try:
            home = infer_home(pings[device], bbox)
        except NoNightDataError:
            dropped_no_night += 1
            continue
        kept, markers = privacy_filter(pings[device], home, home_radius_m)
        days = segment_days(kept, markers, alphabet, device, bbox, min_gap, level)
        if days:
            days_by_device[device] = days

    manifest = split(days_by_device, seed)
    for days in days_by_device.values():  # intervals join the alphabet pre-freeze
        for day in days:
            for gap in day.gaps():
                alphabet.interval_char(tau_of_minutes(gap))
    alphabet.freeze()
    alphabet.save(out / "alphabet.tsv")
    manifest.save(out / "split.txt")

    counts = {}
    for name, devices in (("train", manifest.train), ("test", manifest.test)):
        days = [d for dev in devices for d in days_by_device.get(dev, [])]
        if conditioning:
            for day in days:
                if day.date not in envs:
                    raise CorpusError(f"no environment row for {day.date}")
        with open(out / f"corpus_{name}.txt", "w", encoding="utf-8") as fh:
            for day in days:
                env = envs.get(day.date) if conditioning else None
                attrs = device_attrs.get(day.device_id) if conditioning else None
                fh.write(serialize(day, alphabet, env, attrs) + "\n")
        write_day_records(days, envs, device_attrs, out / f"days_{name}.jsonl")
        counts[name] = len(days)

    (out / "summary.json").write_text(
        json.dumps(
            {
                "devices": summary.devices,
                "rows_total": summary.rows_total,
                "rows_malformed": summary.rows_malformed,
                "rows_deduped": summary.rows_deduped,
                "devices_no_night": dropped_no_night,
                "train_lines": counts["train"],
                "test_lines": counts["test"],
                "seed": seed,
                "conditioning": conditioning,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    return CorpusBuildResult(
        out, summary.devices, dropped_no_night, counts["train"], counts["test"],
        alphabet, manifest,
    )

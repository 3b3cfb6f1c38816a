"""Synthetic mobility corpus with known ground-truth structure.

Agents walk a semi-Markov chain over personal anchors (home, one workplace,
a few leisure venues drawn from shared city pools) with lognormal dwell
times. Conditioning effects are planted as simple multiplicative odds
adjustments (weekends scale the odds of choosing a leisure destination),
so their footprint in the generated corpus is analytically known.

Agent-days are mutually independent — each one is simulated from its own
seeded generator, so output is deterministic and ordered by (device, date)
regardless of evaluation order.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import asdict, dataclass, field
from datetime import date as date_type
from datetime import timedelta
from pathlib import Path

from .codec import BoundingBox, GeoPoint, decode_center, encode_cell
from .corpus import ENV_CSV_HEADER, PING_CSV_HEADER, UNKNOWN, AttributeSet, EnvironmentSet
from .evaluation import haversine_km

ROLES = ("home", "work", "leisure")

#: A coastal-city-sized box (about 13 x 12 km).
CITY_BBOX = BoundingBox(35.60, 35.72, 139.85, 139.98)

WORLD_FORMAT = "trajworld v1"


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class DwellSpec:
    """Lognormal dwell in minutes: exp(N(mu, sigma)) clamped to the floor."""

    mu: float  # mean of log-minutes
    sigma: float
    floor: int = 10


def _default_transitions() -> dict[str, dict[str, float]]:
    return {
        "home": {"home": 0.0, "work": 0.72, "leisure": 0.28},
        "work": {"home": 0.50, "work": 0.0, "leisure": 0.50},
        "leisure": {"home": 0.65, "work": 0.03, "leisure": 0.32},
    }


def _default_dwell() -> dict[str, DwellSpec]:
    # tuned so the mean time away from home sits near 13 hours
    return {
        "home": DwellSpec(mu=math.log(55.0), sigma=0.50),  # temporary returns
        "work": DwellSpec(mu=math.log(580.0), sigma=0.20),
        "leisure": DwellSpec(mu=math.log(42.0), sigma=0.55),
    }


def _default_known_rates() -> dict[str, float]:
    return {"gender": 0.71, "age_band": 0.64, "home_in_city": 0.88, "work_in_city": 0.87}


def _default_age_mix() -> dict[str, float]:
    return {"Under29": 0.30, "30to59": 0.45, "Over60": 0.25}


def _default_age_dwell_scale() -> dict[str, float]:
    return {"Under29": 1.0, "30to59": 1.0, "Over60": 1.0}


@dataclass(frozen=True)
class GeneratorConfig:
    n_agents: int = 50
    n_days: int = 14
    start_date: str = "2021-04-05"  # a Monday
    bbox: BoundingBox = CITY_BBOX
    n_work_venues: int = 40
    n_leisure_venues: int = 120
    leisure_anchors_per_agent: int = 3
    transitions: dict[str, dict[str, float]] = field(default_factory=_default_transitions)
    dwell: dict[str, DwellSpec] = field(default_factory=_default_dwell)
    weekend_leisure_odds: float = 5.0
    age_dwell_mu_scale: dict[str, float] = field(default_factory=_default_age_dwell_scale)
    leave_home_mean: float = 480.0  # minutes since midnight
    leave_home_sd: float = 35.0
    final_return_after: float = 960.0  # earlier home arrivals are temporary
    forced_home_clock: float = 1350.0  # head home once it gets this late
    day_cap: float = 1439.0
    travel_speed_kmh: float = 18.0
    travel_overhead: tuple[float, float] = (5.0, 15.0)
    ping_period: tuple[float, float] = (25.0, 50.0)
    known_rates: dict[str, float] = field(default_factory=_default_known_rates)
    age_mix: dict[str, float] = field(default_factory=_default_age_mix)
    home_out_fraction: float = 0.10
    work_out_fraction: float = 0.15
    out_ring_margin: float = 0.08  # degrees around the box for out-of-city anchors

    def __post_init__(self):
        for role, row in self.transitions.items():
            if role not in ROLES or set(row) != set(ROLES):
                raise SynthError(f"transition row {role!r} must cover {ROLES}")
            total = sum(row.values())
            if abs(total - 1.0) > 1e-9 or min(row.values()) < 0:
                raise SynthError(f"transition row {role!r} must be a distribution")
        for role, spec in self.dwell.items():
            if spec.floor < 10:
                raise SynthError(f"dwell floor for {role!r} below the 10-min data floor")
        if self.weekend_leisure_odds <= 0:
            raise SynthError("weekend leisure odds must be positive")
        if not 0 <= self.home_out_fraction <= 1 or not 0 <= self.work_out_fraction <= 1:
            raise SynthError("out-of-city fractions must lie in [0, 1]")


@dataclass(frozen=True)
class AgentSpec:
    device_id: str
    home: GeoPoint  # a grid-cell center
    anchors: dict[str, GeoPoint]  # "work", "leisure0", ...
    true_attrs: AttributeSet  # drives behaviour
    attrs: AttributeSet  # after missingness; what the CSV reports


@dataclass(frozen=True)
class WorldSpec:
    config: GeneratorConfig
    agents: tuple[AgentSpec, ...]


def _snap(point: GeoPoint) -> GeoPoint:
    """Move a point to the center of its 250-m grid cell."""
    return decode_center(encode_cell(point))


def _sample_point(rng: random.Random, box: BoundingBox) -> GeoPoint:
    return GeoPoint(
        rng.uniform(box.lat_min, box.lat_max), rng.uniform(box.lon_min, box.lon_max)
    )


def _sample_ring_point(rng: random.Random, box: BoundingBox, margin: float) -> GeoPoint:
    outer = BoundingBox(
        box.lat_min - margin, box.lat_max + margin,
        box.lon_min - margin, box.lon_max + margin,
    )
    while True:
        p = _sample_point(rng, outer)
        if not box.contains(p):
            return p


def _mask_attrs(attrs: AttributeSet, rates: dict[str, float], rng: random.Random) -> AttributeSet:
    fields = {}
    for name in ("gender", "age_band", "home_in_city", "work_in_city"):
        value = getattr(attrs, name)
        fields[name] = value if rng.random() < rates.get(name, 1.0) else UNKNOWN
    return AttributeSet(**fields)


def build_world(config: GeneratorConfig, seed: int) -> WorldSpec:
    """Place venues and agents; deterministic under (config, seed)."""
    rng = random.Random(f"{seed}|world")
    # one shared venue pool: a cell's identity must not reveal whether a
    # visit there is work or leisure, only the day's dynamics may
    venue_pool = [
        _snap(_sample_point(rng, config.bbox))
        for _ in range(config.n_work_venues + config.n_leisure_venues)
    ]
    bands = sorted(config.age_mix)
    weights = [config.age_mix[b] for b in bands]

    agents = []
    for idx in range(config.n_agents):
        device = f"d{idx:04d}"
        home_out = rng.random() < config.home_out_fraction
        if home_out:
            home = _snap(_sample_ring_point(rng, config.bbox, config.out_ring_margin))
        else:
            home = _snap(_sample_point(rng, config.bbox))
        work_out = rng.random() < config.work_out_fraction
        if work_out:
            work = _snap(_sample_ring_point(rng, config.bbox, config.out_ring_margin))
        else:
            work = rng.choice(venue_pool)
        anchors = {"work": work}
        for j in range(config.leisure_anchors_per_agent):
            anchors[f"leisure{j}"] = rng.choice(venue_pool)
        # keep every anchor out of the home cell so the privacy filter
        # cannot swallow legitimate stops
        home_key = encode_cell(home).index_tuple()
        for key, point in list(anchors.items()):
            while encode_cell(point).index_tuple() == home_key:
                point = _snap(_sample_point(rng, config.bbox))
                anchors[key] = point
        true_attrs = AttributeSet(
            gender=rng.choice(("Male", "Female")),
            age_band=rng.choices(bands, weights=weights)[0],
            home_in_city="no" if home_out else "yes",
            work_in_city="no" if work_out else "yes",
        )
        attrs = _mask_attrs(true_attrs, config.known_rates, rng)
        agents.append(AgentSpec(device, home, anchors, true_attrs, attrs))
    return WorldSpec(config, tuple(agents))


def effective_row(
    config: GeneratorConfig, from_role: str, env: EnvironmentSet
) -> dict[str, float]:
    """Transition row after conditioning: weekends multiply leisure odds."""
    row = dict(config.transitions[from_role])
    if env.day_type == "Weekend" and 0 < row["leisure"] < 1:
        p = row["leisure"]
        odds = config.weekend_leisure_odds * p / (1 - p)
        p_new = odds / (1 + odds)
        rest = 1 - row["leisure"]
        scale = (1 - p_new) / rest if rest > 0 else 0.0
        row = {
            role: (p_new if role == "leisure" else prob * scale)
            for role, prob in row.items()
        }
    return row


@dataclass(frozen=True)
class WalkEvent:
    role: str  # "work" | "leisure" | "home" (temporary return)
    anchor: str  # anchor key, e.g. "work", "leisure1", "home"
    point: GeoPoint
    arrive: float  # minutes since midnight
    dwell: float


@dataclass(frozen=True)
class Walk:
    leave_clock: float
    return_clock: float
    events: tuple[WalkEvent, ...]  # away anchors and temporary home returns
    draws: tuple[tuple[str, str], ...]  # every raw transition sample
    truncated: bool

    @property
    def away_minutes(self) -> float:
        return self.return_clock - self.leave_clock


def _travel_minutes(config: GeneratorConfig, a: GeoPoint, b: GeoPoint, rng) -> float:
    lo, hi = config.travel_overhead
    return haversine_km(a, b) / config.travel_speed_kmh * 60.0 + rng.uniform(lo, hi)


def _dwell_minutes(config: GeneratorConfig, role: str, agent: AgentSpec, rng) -> float:
    spec = config.dwell[role]
    mu = spec.mu
    if role != "home":
        mu *= config.age_dwell_mu_scale.get(agent.true_attrs.age_band, 1.0)
    return max(float(spec.floor), round(rng.lognormvariate(mu, spec.sigma)))


def simulate_walk(
    config: GeneratorConfig, agent: AgentSpec, env: EnvironmentSet, rng: random.Random
) -> Walk | None:
    """One day's semi-Markov walk; None when the agent never leaves home."""
    clock = rng.gauss(config.leave_home_mean, config.leave_home_sd)
    clock = min(max(clock, 0.0), config.day_cap - 60.0)
    leave = clock
    here_role, here_point = "home", agent.home
    events: list[WalkEvent] = []
    draws: list[tuple[str, str]] = []
    truncated = False

    while True:
        if clock >= config.forced_home_clock:
            if not events:
                return None
            travel = _travel_minutes(config, here_point, agent.home, rng)
            return Walk(leave, min(clock + travel, config.day_cap), tuple(events),
                        tuple(draws), truncated)
        row = effective_row(config, here_role, env)
        worked = any(e.role == "work" for e in events)
        modified = worked and row["work"] > 0
        if modified:
            # one work shift per day: spread its mass over the rest
            rest = 1 - row["work"]
            row = {
                role: (0.0 if role == "work" else p / rest if rest else 1.0)
                for role, p in row.items()
            }
        roles, probs = zip(*sorted(row.items()))
        next_role = rng.choices(roles, weights=probs)[0]
        if not modified:  # draws log only honest samples of configured rows
            draws.append((here_role, next_role))
        if here_role == "home" and next_role == "home":
            if not events:
                return None  # stayed home all day
            next_role = "home"  # treated as the final return below
        if next_role == "home":
            travel = _travel_minutes(config, here_point, agent.home, rng)
            arrive = clock + travel
            if arrive >= config.final_return_after or arrive >= config.day_cap:
                return Walk(leave, min(arrive, config.day_cap), tuple(events),
                            tuple(draws), truncated)
            dwell = _dwell_minutes(config, "home", agent, rng)
            events.append(WalkEvent("home", "home", agent.home, arrive, dwell))
            clock = arrive + dwell
            here_role, here_point = "home", agent.home
            continue
        if next_role == "work":
            anchor_key = "work"
        else:
            n = config.leisure_anchors_per_agent
            anchor_key = f"leisure{rng.randrange(n)}"
        target = agent.anchors[anchor_key]
        travel = _travel_minutes(config, here_point, target, rng)
        arrive = clock + travel
        if arrive >= config.day_cap:
            truncated = True
            return Walk(leave, config.day_cap, tuple(events), tuple(draws), truncated)
        dwell = _dwell_minutes(config, next_role, agent, rng)
        if arrive + dwell > config.forced_home_clock:
            # visits are cut short by the evening: nobody lingers past the
            # forced-return hour, so days end before the midnight cap
            spec = config.dwell[next_role]
            dwell = max(float(spec.floor), config.forced_home_clock - arrive)
        if arrive + dwell >= config.day_cap:
            dwell = config.day_cap - arrive
            truncated = True
        events.append(WalkEvent(next_role, anchor_key, target, arrive, dwell))
        clock = arrive + dwell
        here_role, here_point = next_role, target
        if truncated:
            return Walk(leave, config.day_cap, tuple(events), tuple(draws), truncated)


def walk_to_day(walk: Walk, agent: AgentSpec, date: str, alphabet):
    """Anchor-level trajectory: away stops only, home returns become flags."""
    from .corpus import DayTrajectory, HomeFlag, Stop

    away = [e for e in walk.events if e.role != "home"]
    if not away:
        return None
    base = away[0].arrive
    flags = [HomeFlag.NOT_HOME] * len(away)
    for event in walk.events:
        if event.role != "home":
            continue
        idx = None
        for i, stop_event in enumerate(away):
            if stop_event.arrive < event.arrive:
                idx = i
        if idx is not None and idx < len(away) - 1:
            flags[idx] = HomeFlag.TEMP_HOME
    flags[-1] = HomeFlag.FINAL_HOME
    stops = []
    last_offset = -1
    for event, flag in zip(away, flags):
        offset = int(round(event.arrive - base))
        if offset <= last_offset:  # defensive: rounding collisions
            offset = last_offset + 1
        cell = alphabet.cell_to_chars(encode_cell(event.point))
        stops.append(Stop(cell, offset, flag))
        last_offset = offset
    return DayTrajectory(
        t0=int(round(base)), stops=tuple(stops),
        device_id=agent.device_id, date=date,
    )


def simulate_day(
    config: GeneratorConfig,
    agent: AgentSpec,
    env: EnvironmentSet,
    date: str,
    seed: int,
    alphabet=None,
):
    """Anchor-level DayTrajectory for one agent-day; None for stay-home days."""
    from .codec import TrajectoryAlphabet

    rng = random.Random(f"{seed}|{agent.device_id}|{date}")
    walk = simulate_walk(config, agent, env, rng)
    if walk is None:
        return None
    return walk_to_day(
        walk, agent, date, alphabet if alphabet is not None else TrajectoryAlphabet()
    )


# --- calendar / environment ---------------------------------------------------


def _environment_draws(config: GeneratorConfig, seed: int):
    """(date, day_type, temp_c, weather, covid_count) per calendar day:
    seasonal temperature, categorical weather, a case-count random walk."""
    rng = random.Random(f"{seed}|env")
    start = date_type.fromisoformat(config.start_date)
    covid = 12_000.0
    out = []
    for offset in range(config.n_days):
        day = start + timedelta(days=offset)
        day_type = "Weekend" if day.weekday() >= 5 else "Weekday"
        doy = day.timetuple().tm_yday
        temp = 18.0 + 14.0 * math.sin(2 * math.pi * (doy - 105) / 365.0) + rng.gauss(0, 2)
        weather = rng.choices(("Sunny", "Cloudy", "Rainy"), weights=(0.45, 0.35, 0.20))[0]
        covid = min(max(covid * math.exp(rng.gauss(0.02, 0.08)), 5_000.0), 60_000.0)
        out.append((day.isoformat(), day_type, temp, weather, int(covid)))
    return out


def make_environment(config: GeneratorConfig, seed: int) -> dict[str, EnvironmentSet]:
    return {
        date: EnvironmentSet.from_raw(day_type, temp, weather, covid)
        for date, day_type, temp, weather, covid in _environment_draws(config, seed)
    }


def _raw_environment_rows(config: GeneratorConfig, seed: int) -> list[list[str]]:
    return [
        [date, day_type, f"{temp:.1f}", weather, str(covid)]
        for date, day_type, temp, weather, covid in _environment_draws(config, seed)
    ]


# --- ping emission --------------------------------------------------------------


def _minute_stamp(date: str, minute: float) -> str:
    clock = min(int(minute), 1439)
    return f"{date}T{clock // 60:02d}:{clock % 60:02d}"


def agent_day_pings(
    config: GeneratorConfig, agent: AgentSpec, env: EnvironmentSet, date: str, seed: int
) -> list[tuple[str, GeoPoint]]:
    """(timestamp, point) rows for one agent-day: night pings at home, an
    arrival ping plus periodic dwell pings per visit, and home-return pings."""
    rng = random.Random(f"{seed}|{agent.device_id}|{date}")
    walk = simulate_walk(config, agent, env, rng)
    ping_rng = random.Random(f"{seed}|{agent.device_id}|{date}|pings")
    rows: list[tuple[str, GeoPoint]] = []
    night_minutes = sorted(ping_rng.sample(range(0, 355), 3))
    for minute in night_minutes:
        rows.append((_minute_stamp(date, minute), agent.home))
    if walk is None:
        return rows
    lo, hi = config.ping_period
    for event in walk.events:
        rows.append((_minute_stamp(date, event.arrive), event.point))
        t = event.arrive + ping_rng.uniform(lo, hi)
        while t < event.arrive + event.dwell and t < config.day_cap:
            rows.append((_minute_stamp(date, t), event.point))
            t += ping_rng.uniform(lo, hi)
    if walk.return_clock < 1440:
        rows.append((_minute_stamp(date, walk.return_clock), agent.home))
    return rows


def _attr_columns(attrs: AttributeSet) -> list[str]:
    return [
        "" if attrs.gender == UNKNOWN else attrs.gender,
        "" if attrs.age_band == UNKNOWN else attrs.age_band,
        "" if attrs.home_in_city == UNKNOWN else attrs.home_in_city,
        "" if attrs.work_in_city == UNKNOWN else attrs.work_in_city,
    ]


def generate_corpus(config: GeneratorConfig, out_dir: str | Path, seed: int) -> WorldSpec:
    """Emit pings.csv + environment.csv + world.json under out_dir.

    The files speak exactly the formats the ingestion path consumes, so the
    whole pipeline can be exercised end to end on a corpus whose generating
    process is known.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = build_world(config, seed)
    envs = make_environment(config, seed)

    with open(out / "pings.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PING_CSV_HEADER)
        for agent in world.agents:
            attr_cols = _attr_columns(agent.attrs)
            for date in sorted(envs):
                rows = agent_day_pings(config, agent, envs[date], date, seed)
                for stamp, point in rows:
                    writer.writerow(
                        [agent.device_id, stamp, f"{point.lat:.6f}", f"{point.lon:.6f}"]
                        + attr_cols
                    )

    with open(out / "environment.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ENV_CSV_HEADER)
        writer.writerows(_raw_environment_rows(config, seed))

    save_world(world, out / "world.json")
    return world


# --- persistence ----------------------------------------------------------------


def save_world(world: WorldSpec, path: str | Path) -> None:
    config = asdict(world.config)
    config["bbox"] = list(vars(world.config.bbox).values())
    doc = {
        "format": WORLD_FORMAT,
        "config": config,
        "agents": [
            {
                "device": a.device_id,
                "home": [a.home.lat, a.home.lon],
                "anchors": {k: [p.lat, p.lon] for k, p in sorted(a.anchors.items())},
                "true_attrs": asdict(a.true_attrs),
                "attrs": asdict(a.attrs),
            }
            for a in world.agents
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")


def load_world(path: str | Path) -> WorldSpec:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != WORLD_FORMAT:
        raise SynthError(f"unsupported world file format: {doc.get('format')!r}")
    raw = dict(doc["config"])
    raw["bbox"] = BoundingBox(*raw["bbox"])
    raw["dwell"] = {k: DwellSpec(**v) for k, v in raw["dwell"].items()}
    raw["travel_overhead"] = tuple(raw["travel_overhead"])
    raw["ping_period"] = tuple(raw["ping_period"])
    config = GeneratorConfig(**raw)
    agents = tuple(
        AgentSpec(
            device_id=a["device"],
            home=GeoPoint(*a["home"]),
            anchors={k: GeoPoint(*p) for k, p in a["anchors"].items()},
            true_attrs=AttributeSet(**a["true_attrs"]),
            attrs=AttributeSet(**a["attrs"]),
        )
        for a in doc["agents"]
    )
    return WorldSpec(config, agents)

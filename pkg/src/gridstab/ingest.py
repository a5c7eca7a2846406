"""Case-file parsing and load/generation profile preparation.

Only the MATPOWER subset needed for a radial feeder is understood:
``mpc.baseMVA``, ``mpc.bus`` (BUS_I, BUS_TYPE, PD, QD, ..., VM in column 8)
and ``mpc.branch`` (F_BUS, T_BUS, BR_R, BR_X).  Other matrices are skipped and
anything that needs Octave to evaluate is ignored with a warning.

Profiles go through the same pipeline whether they come from CSV or from the
synthetic generators: 10-minute knots -> natural cubic spline on a ``dt``
grid -> normalize by the series peak -> slice a simulation window.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    CaseSyntaxError,
    DegenerateKnots,
    MissingSection,
    MultipleSlackBuses,
    NonRadialCase,
    NoSlackBus,
    NetworkError,
    OutOfRange,
    ProfileError,
)
from .netmodel import Branch, Bus, NetworkModel, normalize_orientation

log = logging.getLogger(__name__)

DAY = 86400.0

_SCALAR = re.compile(r"^mpc\.(\w+)\s*=\s*([^;\[]+?)\s*;?\s*$")
_MATRIX_OPEN = re.compile(r"^mpc\.(\w+)\s*=\s*\[(.*)$")


# --------------------------------------------------------------------------
# MATPOWER
# --------------------------------------------------------------------------

@dataclass
class _Section:
    name: str
    start: int
    rows: list[tuple[int, list[float]]] = field(default_factory=list)
    end: int | None = None


def _parse_rows(section: _Section, body: str, lineno: int, strict: bool):
    for chunk in body.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if not strict:
            section.rows.append((lineno, []))
            continue
        try:
            values = [float(tok) for tok in chunk.replace(",", " ").split()]
        except ValueError:
            raise CaseSyntaxError(f"non-numeric entry in mpc.{section.name}: {chunk!r}", lineno) from None
        section.rows.append((lineno, values))


def _scan(text: str) -> tuple[dict[str, float], dict[str, _Section], int]:
    scalars: dict[str, float] = {}
    sections: dict[str, _Section] = {}
    current: _Section | None = None
    lines = text.splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("%", 1)[0].strip()
        if not line:
            continue
        if current is not None:
            strict = current.name in ("bus", "branch")
            if "]" in line:
                body, _, rest = line.partition("]")
                _parse_rows(current, body, lineno, strict)
                if rest.strip() not in ("", ";"):
                    raise CaseSyntaxError(f"unexpected text after ']': {rest.strip()!r}", lineno)
                current.end = lineno
                current = None
            else:
                _parse_rows(current, line, lineno, strict)
            continue
        m = _MATRIX_OPEN.match(line)
        if m:
            name = m.group(1)
            if name in sections:
                raise CaseSyntaxError(f"mpc.{name} defined twice", lineno)
            current = sections[name] = _Section(name, lineno)
            body = m.group(2)
            if "]" in body:
                body, _, rest = body.partition("]")
                _parse_rows(current, body, lineno, name in ("bus", "branch"))
                if rest.strip() not in ("", ";"):
                    raise CaseSyntaxError(f"unexpected text after ']': {rest.strip()!r}", lineno)
                current.end = lineno
                current = None
            else:
                _parse_rows(current, body, lineno, name in ("bus", "branch"))
            continue
        m = _SCALAR.match(line)
        if m:
            name, value = m.group(1), m.group(2).strip()
            if name == "baseMVA":
                try:
                    scalars[name] = float(value)
                except ValueError:
                    raise CaseSyntaxError(f"mpc.baseMVA is not a number: {value!r}", lineno) from None
            continue
        if line.startswith("function"):
            continue
        log.warning("line %d: ignoring statement %r", lineno, line[:60])
    if current is not None:
        raise CaseSyntaxError(f"mpc.{current.name} opened on line {current.start} is never closed", len(lines))
    return scalars, sections, len(lines)


def _check_columns(section: _Section, minimum: int):
    width = None
    for lineno, row in section.rows:
        if len(row) < minimum:
            raise CaseSyntaxError(f"mpc.{section.name} row has {len(row)} columns, need at least {minimum}", lineno)
        if width is not None and len(row) != width:
            raise CaseSyntaxError(f"mpc.{section.name} row has {len(row)} columns, previous rows have {width}", lineno)
        width = len(row)


def _as_int(value: float, lineno: int, what: str) -> int:
    if value != int(value):
        raise CaseSyntaxError(f"{what} must be an integer, got {value}", lineno)
    return int(value)


def parse_matpower(text: str) -> NetworkModel:
    """Parse a MATPOWER case into a normalized :class:`NetworkModel`."""
    scalars, sections, nlines = _scan(text)
    if "baseMVA" not in scalars:
        raise MissingSection("mpc.baseMVA not found", nlines)
    for name in ("bus", "branch"):
        if name not in sections:
            raise MissingSection(f"mpc.{name} not found", nlines)
    base = scalars["baseMVA"]
    if base <= 0:
        raise CaseSyntaxError("mpc.baseMVA must be positive", nlines)

    bus_sec, br_sec = sections["bus"], sections["branch"]
    _check_columns(bus_sec, 4)
    _check_columns(br_sec, 4)

    buses: list[Bus] = []
    slack = None
    v0 = 1.0
    seen: set[int] = set()
    for lineno, row in bus_sec.rows:
        bus_id = _as_int(row[0], lineno, "BUS_I")
        if bus_id in seen:
            raise CaseSyntaxError(f"duplicate bus id {bus_id}", lineno)
        seen.add(bus_id)
        if int(row[1]) == 3:
            if slack is not None:
                raise MultipleSlackBuses(f"buses {slack} and {bus_id} are both type 3", lineno)
            slack = bus_id
            if len(row) >= 8 and row[7] > 0:
                v0 = row[7]
        buses.append(Bus(bus_id, row[2] / base, row[3] / base))
    if slack is None:
        raise NoSlackBus("no bus of type 3 (substation) in mpc.bus", bus_sec.start)

    # union-find in file order pins a cycle to the branch row that closes it
    root = {b: b for b in seen}

    def find(a: int) -> int:
        while root[a] != a:
            root[a] = root[root[a]]
            a = root[a]
        return a

    branches: list[Branch] = []
    for lineno, row in br_sec.rows:
        f = _as_int(row[0], lineno, "F_BUS")
        t = _as_int(row[1], lineno, "T_BUS")
        for b in (f, t):
            if b not in seen:
                raise CaseSyntaxError(f"branch references unknown bus {b}", lineno)
        if row[2] < 0 or row[3] < 0:
            raise CaseSyntaxError("negative branch impedance", lineno)
        a, b = find(f), find(t)
        if a == b:
            raise NonRadialCase(f"branch {f}-{t} closes a loop", lineno)
        root[a] = b
        branches.append(Branch(f, t, row[2], row[3]))
    if len(branches) != len(buses) - 1:
        raise NonRadialCase(
            f"{len(branches)} branches for {len(buses)} buses; network is disconnected", br_sec.end or nlines
        )

    network = NetworkModel(tuple(buses), tuple(branches), base_mva=base, substation_id=slack, v0=v0)
    try:
        return normalize_orientation(network)
    except NetworkError as exc:  # pragma: no cover - union-find already guarantees a tree
        raise NonRadialCase(str(exc), br_sec.start) from exc


def load_case(path: str | Path) -> NetworkModel:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return network_from_json(text)
    return parse_matpower(text)


def builtin_case_path(name: str = "case85") -> Path:
    return Path(__file__).parent / "data" / f"{name}.m"


# --------------------------------------------------------------------------
# internal JSON network form
# --------------------------------------------------------------------------

def network_to_dict(network: NetworkModel) -> dict:
    return {
        "base_mva": network.base_mva,
        "v0": network.v0,
        "substation": network.substation_id,
        "buses": [{"id": b.id, "p_load": b.p_load, "q_load": b.q_load} for b in network.buses],
        "branches": [{"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x} for br in network.branches],
    }


def network_to_json(network: NetworkModel) -> str:
    return json.dumps(network_to_dict(network), indent=1)


def network_from_json(text: str) -> NetworkModel:
    data = json.loads(text)
    buses = tuple(Bus(int(b["id"]), float(b["p_load"]), float(b["q_load"])) for b in data["buses"])
    branches = tuple(
        Branch(int(br["from"]), int(br["to"]), float(br["r"]), float(br["x"])) for br in data["branches"]
    )
    network = NetworkModel(
        buses,
        branches,
        base_mva=float(data["base_mva"]),
        substation_id=int(data.get("substation", buses[0].id)),
        v0=float(data.get("v0", 1.0)),
    )
    return normalize_orientation(network)


# --------------------------------------------------------------------------
# profiles
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1 or t.size == 0:
            raise ProfileError("profile needs matching non-empty 1-d time and value arrays")
        if np.any(np.diff(t) <= 0):
            raise ProfileError("profile timestamps must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ProfileError("profile values must be finite")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ProfileSet:
    """Load multipliers per bus id and generation multipliers per inverter bus."""

    loads: dict[int, Profile]
    generation: dict[int, Profile]
    dt: float = 1.0

    def _map(self, fn) -> "ProfileSet":
        return ProfileSet(
            {k: fn(p) for k, p in self.loads.items()},
            {k: fn(p) for k, p in self.generation.items()},
            self.dt,
        )


def read_profile_csv(source) -> Profile:
    """Read ``t,value`` CSV text, a path, or an open file into knots."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        text = Path(source).read_text()
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["t", "value"]:
        raise ProfileError(f"profile CSV must start with header 't,value', got {header}")
    t, v = [], []
    for k, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            t.append(float(row[0]))
            v.append(float(row[1]))
        except (ValueError, IndexError):
            raise ProfileError(f"profile CSV line {k}: cannot parse {row}") from None
    return Profile(np.array(t), np.array(v))


def write_profile_csv(profile: Profile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "value"])
        for t, v in zip(profile.t, profile.values):
            w.writerow([f"{t:.10g}", f"{v:.10g}"])


def spline_resample(knots: Profile, dt: float) -> Profile:
    """Natural cubic spline through the knots, sampled every ``dt`` seconds.

    The grid runs from the first knot up to but excluding the last one, so a
    day of 10-minute knots (0 .. 86400 s) gives 86400 one-second samples.
    Negative overshoots are clipped to zero.
    """
    if knots.t.size < 2:
        raise DegenerateKnots("need at least two knots")
    if dt <= 0:
        raise ValueError("dt must be positive")
    spline = CubicSpline(knots.t, knots.values, bc_type="natural")
    steps = int(math.floor((knots.t[-1] - knots.t[0]) / dt + 1e-9))
    grid = knots.t[0] + dt * np.arange(max(steps, 1))
    return Profile(grid, np.clip(spline(grid), 0.0, None))


def _normalize(p: Profile) -> Profile:
    peak = p.values.max()
    if peak <= 0:
        return Profile(p.t, np.clip(p.values, 0.0, None))
    return Profile(p.t, np.clip(p.values / peak, 0.0, None))


def normalize_profiles(raw: ProfileSet) -> ProfileSet:
    """Scale every series to a peak of 1.0; all-zero series pass through."""
    return raw._map(_normalize)


def slice_window(profiles: ProfileSet, start: float, end: float) -> ProfileSet:
    """Keep samples with ``start <= t <= end`` and shift them to start at 0."""
    if end < start:
        raise OutOfRange(f"window end {end} precedes start {start}")

    def cut(p: Profile) -> Profile:
        if start < p.t[0] - 1e-9 or end > p.t[-1] + 1e-9:
            raise OutOfRange(f"window [{start}, {end}] outside profile coverage [{p.t[0]}, {p.t[-1]}]")
        keep = (p.t >= start - 1e-9) & (p.t <= end + 1e-9)
        return Profile(p.t[keep] - start, p.values[keep])

    return profiles._map(cut)


# --------------------------------------------------------------------------
# synthetic day profiles (stand-ins for metered household / PV data)
# --------------------------------------------------------------------------

KNOT_SPACING = 600.0


def _knot_times() -> np.ndarray:
    return np.arange(0.0, DAY + KNOT_SPACING / 2, KNOT_SPACING)


def synthetic_load_knots(seed: int, noise: float = 0.1) -> Profile:
    """Residential demand at 10-minute resolution: night base, morning bump, evening peak."""
    rng = np.random.default_rng(seed)
    t = _knot_times()
    h = t / 3600.0
    shape = (
        0.30
        + 0.25 * np.exp(-0.5 * ((h - 7.5) / 1.2) ** 2)
        + 0.60 * np.exp(-0.5 * ((h - 19.0) / 2.0) ** 2)
        + 0.05 * np.exp(-0.5 * ((h - 12.5) / 1.5) ** 2)
    )
    shift = rng.normal(0.0, 0.5)  # households do not peak at the same minute
    shape = np.interp(h, h + shift, shape, period=24.0)
    values = shape * (1.0 + noise * rng.standard_normal(t.size))
    return Profile(t, np.clip(values, 0.02, None))


def synthetic_solar_knots(
    seed: int,
    clouds: list[tuple[float, float, float]] = (),
    variability: float = 0.0,
    sunrise: float = 6.0,
    sunset: float = 19.0,
) -> Profile:
    """PV output at 10-minute resolution.

    ``clouds`` lists ``(t_start, t_end, depth)`` in seconds of the day; knots
    inside a cloud are attenuated by ``depth`` (0..1).  ``variability`` adds
    seeded multiplicative noise to daylight knots.
    """
    rng = np.random.default_rng(seed)
    t = _knot_times()
    h = t / 3600.0
    phase = np.clip((h - sunrise) / (sunset - sunrise), 0.0, 1.0)
    clear = np.sin(np.pi * phase) ** 1.3
    clear[(phase <= 0) | (phase >= 1)] = 0.0
    values = clear.copy()
    if variability > 0:
        values *= np.clip(1.0 + variability * rng.standard_normal(t.size), 0.0, None)
    for start, end, depth in clouds:
        inside = (t >= start) & (t <= end)
        values[inside] *= 1.0 - depth
    values[clear <= 0] = 0.0
    return Profile(t, values)

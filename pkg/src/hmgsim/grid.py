"""Domain model of the hybrid ac/dc microgrid and scenario ingestion.

The physical world is described by four record types (buses, lines, DG
units, the ac-dc converter) plus a 24-hour scenario holding the hourly
load factors, dc load demand, and normalized renewable output patterns.
All records are immutable after construction and safe to share between
threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "Bus",
    "Line",
    "DGUnit",
    "Converter",
    "Scenario",
    "Network",
    "GridDataError",
    "load_scenario",
    "load_network",
    "bundled_network",
    "bundled_scenario",
    "res_output",
    "bus_load",
]

DISPATCHABLE_KINDS = ("MT", "FC")
RES_KINDS = ("WT", "PV")


class GridDataError(ValueError):
    """Malformed or inconsistent grid/scenario input."""


@dataclass(frozen=True)
class Bus:
    id: int
    subgrid: str  # "ac" or "dc"
    v_min: float = 0.9
    v_max: float = 1.1
    peak_active_load: float = 0.0   # kW
    peak_reactive_load: float = 0.0  # kvar

    def __post_init__(self):
        for name in ("v_min", "v_max", "peak_active_load", "peak_reactive_load"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.subgrid not in ("ac", "dc"):
            raise GridDataError(f"bus {self.id}: subgrid must be 'ac' or 'dc'")
        if not (0.0 < self.v_min < self.v_max):
            raise GridDataError(f"bus {self.id}: need 0 < v_min < v_max")
        if self.peak_active_load < 0 or self.peak_reactive_load < 0:
            raise GridDataError(f"bus {self.id}: peak loads must be >= 0")
        if self.subgrid == "dc" and self.peak_reactive_load != 0:
            raise GridDataError(f"bus {self.id}: dc buses carry no reactive load")


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    resistance: float  # per-unit
    reactance: float   # per-unit
    capacity: float    # kW

    def __post_init__(self):
        for name in ("resistance", "reactance", "capacity"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.resistance < 0:
            raise GridDataError(f"line {self.from_bus}-{self.to_bus}: resistance < 0")
        if self.capacity <= 0:
            raise GridDataError(f"line {self.from_bus}-{self.to_bus}: capacity must be > 0")


@dataclass(frozen=True)
class DGUnit:
    id: str
    bus: int
    kind: str  # WT | PV | MT | FC
    dispatchable: bool
    p_min: float = 0.0     # kW
    p_max: float = 0.0     # kW
    energy_cost: float = 0.0    # currency / kWh
    startup_cost: float = 0.0   # currency per start
    shutdown_cost: float = 0.0  # currency per stop
    ramp_up: float = 0.0   # kW/h
    ramp_down: float = 0.0  # kW/h
    capacity: float = 0.0  # kW nameplate, renewables only
    swing: bool = False    # grid-forming unit whose dispatch closes the ac balance

    def __post_init__(self):
        for name in ("p_min", "p_max", "energy_cost", "startup_cost",
                     "shutdown_cost", "ramp_up", "ramp_down", "capacity"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.kind not in DISPATCHABLE_KINDS + RES_KINDS:
            raise GridDataError(f"unit {self.id}: unknown kind {self.kind!r}")
        if self.kind in RES_KINDS and self.dispatchable:
            raise GridDataError(f"unit {self.id}: {self.kind} units are non-dispatchable")
        if not (0 <= self.p_min <= self.p_max) and self.dispatchable:
            raise GridDataError(f"unit {self.id}: need 0 <= p_min <= p_max")
        if self.dispatchable and (self.ramp_up <= 0 or self.ramp_down <= 0):
            raise GridDataError(f"unit {self.id}: dispatchable units need ramp rates > 0")
        if self.capacity < 0:
            raise GridDataError(f"unit {self.id}: capacity must be >= 0")


@dataclass(frozen=True)
class Converter:
    p_min: float  # kW, < 0 (max dc->ac transfer)
    p_max: float  # kW, > 0 (max ac->dc transfer)
    ac_bus: int
    dc_bus: int

    def __post_init__(self):
        object.__setattr__(self, "p_min", float(self.p_min))
        object.__setattr__(self, "p_max", float(self.p_max))
        # Sign convention: negative setpoint = power flowing dc -> ac.
        if not (self.p_min < 0 < self.p_max):
            raise GridDataError("converter must be bidirectional: p_min < 0 < p_max")


@dataclass(frozen=True)
class Scenario:
    """Hourly operating conditions over the scheduling horizon."""

    horizon: int
    ac_load_factor: tuple[float, ...]
    dc_load_demand: tuple[float, ...]   # kW
    wt_pattern: tuple[float, ...]       # in [0, 1]
    pv_pattern: tuple[float, ...]       # in [0, 1]
    reserve_requirement: tuple[float, ...]  # kW
    ens_penalty: float = 4.0  # currency per kWh of energy not supplied

    def __post_init__(self):
        series = {
            "ac_load_factor": self.ac_load_factor,
            "dc_load_demand": self.dc_load_demand,
            "wt_pattern": self.wt_pattern,
            "pv_pattern": self.pv_pattern,
            "reserve_requirement": self.reserve_requirement,
        }
        for name, s in series.items():
            if len(s) != self.horizon:
                raise GridDataError(f"{name}: expected {self.horizon} entries, got {len(s)}")
        for name in ("wt_pattern", "pv_pattern"):
            for t, v in enumerate(series[name]):
                if not (0.0 <= v <= 1.0):
                    raise GridDataError(f"{name}[{t}]={v} outside [0, 1]")
        if any(f <= 0 for f in self.ac_load_factor):
            raise GridDataError("ac load factors must be > 0")
        if any(d < 0 for d in self.dc_load_demand):
            raise GridDataError("dc load demand must be >= 0")


@dataclass(frozen=True)
class Network:
    """The complete physical description: buses, lines, DG fleet, converter."""

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    dg_units: tuple[DGUnit, ...]
    converter: Converter
    slack_bus: int = 1
    name: str = ""

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise GridDataError("duplicate bus ids")
        bus_ids = set(ids)
        for ln in self.lines:
            if ln.from_bus not in bus_ids or ln.to_bus not in bus_ids:
                raise GridDataError(f"line {ln.from_bus}-{ln.to_bus} references unknown bus")
        for u in self.dg_units:
            if u.bus not in bus_ids:
                raise GridDataError(f"unit {u.id} placed on unknown bus {u.bus}")
        if self.converter.ac_bus not in bus_ids or self.converter.dc_bus not in bus_ids:
            raise GridDataError("converter references unknown bus")
        if self.slack_bus not in bus_ids:
            raise GridDataError(f"slack bus {self.slack_bus} not in network")
        swings = [u for u in self.dg_units if u.swing]
        if len(swings) > 1:
            raise GridDataError("at most one swing unit allowed")
        if swings and swings[0].bus != self.slack_bus:
            raise GridDataError("swing unit must sit on the slack bus")

    @property
    def ac_buses(self) -> tuple[Bus, ...]:
        return tuple(b for b in self.buses if b.subgrid == "ac")

    @property
    def dc_buses(self) -> tuple[Bus, ...]:
        return tuple(b for b in self.buses if b.subgrid == "dc")

    @property
    def ac_lines(self) -> tuple[Line, ...]:
        ac_ids = {b.id for b in self.ac_buses}
        return tuple(l for l in self.lines if l.from_bus in ac_ids and l.to_bus in ac_ids)

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def unit(self, unit_id: str) -> DGUnit:
        for u in self.dg_units:
            if u.id == unit_id:
                return u
        raise KeyError(unit_id)

    @property
    def dispatchable_units(self) -> tuple[DGUnit, ...]:
        return tuple(u for u in self.dg_units if u.dispatchable)

    @property
    def res_units(self) -> tuple[DGUnit, ...]:
        return tuple(u for u in self.dg_units if not u.dispatchable)

    @property
    def swing_unit(self) -> DGUnit | None:
        for u in self.dg_units:
            if u.swing:
                return u
        return None

    def dc_units(self) -> tuple[DGUnit, ...]:
        dc_ids = {b.id for b in self.dc_buses}
        return tuple(u for u in self.dg_units if u.bus in dc_ids)

    def total_ac_peak(self) -> float:
        return sum(b.peak_active_load for b in self.ac_buses)

    def is_radial(self) -> bool:
        """True iff the ac line set forms one tree rooted at the slack bus."""
        ac_ids = [b.id for b in self.ac_buses]
        lines = self.ac_lines
        if len(lines) != len(ac_ids) - 1:
            return False
        adj: dict[int, list[int]] = {i: [] for i in ac_ids}
        for ln in lines:
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
        seen = {self.slack_bus}
        stack = [self.slack_bus]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == len(ac_ids)


def res_output(unit: DGUnit, hour: int, scenario: Scenario) -> float:
    """Available output of a renewable unit: nameplate times the hourly pattern."""
    if unit.dispatchable or unit.kind not in RES_KINDS:
        raise GridDataError(f"res_output called on dispatchable unit {unit.id}")
    pattern = scenario.wt_pattern if unit.kind == "WT" else scenario.pv_pattern
    return unit.capacity * pattern[hour]


def bus_load(bus: Bus, hour: int, scenario: Scenario) -> tuple[float, float]:
    """(kW, kvar) demand at a bus for the given hour.

    ac buses scale their peak by the hourly load factor; the aggregate dc
    bus carries the scenario's dc load series.
    """
    if not (0 <= hour < scenario.horizon):
        raise IndexError(f"hour {hour} outside horizon {scenario.horizon}")
    if bus.subgrid == "dc":
        return scenario.dc_load_demand[hour], 0.0
    f = scenario.ac_load_factor[hour]
    return bus.peak_active_load * f, bus.peak_reactive_load * f


# ---------------------------------------------------------------------------
# ingestion

_SCENARIO_COLUMNS = ("hour", "ac_load_factor", "dc_load_kw", "wt_pattern", "pv_pattern")


def load_scenario(
    source: str | Path | io.TextIOBase,
    *,
    reserve_fraction: float = 0.05,
    ac_peak_kw: float | None = None,
    ens_penalty: float = 4.0,
) -> Scenario:
    """Parse the hourly scenario CSV (header row + one row per hour).

    The spinning-reserve series defaults to ``reserve_fraction`` of the
    hourly total demand; computing it needs the system ac peak, so pass
    ``ac_peak_kw`` (the CLI forwards the network's total). Without it the
    reserve covers the dc demand only.
    """
    text = _read_source(source)
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise GridDataError("scenario file is empty")
    header = [c.strip().lower() for c in rows[0]]
    if header != list(_SCENARIO_COLUMNS):
        raise GridDataError(f"scenario header must be {','.join(_SCENARIO_COLUMNS)}")
    factors, dc, wt, pv = [], [], [], []
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != 5:
            raise GridDataError(f"scenario row {i}: expected 5 columns, got {len(row)}")
        try:
            vals = [float(x) for x in row[1:]]
        except ValueError as exc:
            raise GridDataError(f"scenario row {i}: non-numeric value ({exc})") from None
        factors.append(vals[0])
        dc.append(vals[1])
        wt.append(vals[2])
        pv.append(vals[3])
    n = len(factors)
    peak = ac_peak_kw or 0.0
    reserve = tuple(reserve_fraction * (peak * factors[t] + dc[t]) for t in range(n))
    return Scenario(
        horizon=n,
        ac_load_factor=tuple(factors),
        dc_load_demand=tuple(dc),
        wt_pattern=tuple(wt),
        pv_pattern=tuple(pv),
        reserve_requirement=reserve,
        ens_penalty=ens_penalty,
    )


def _read_source(source: str | Path | io.TextIOBase) -> str:
    """Accept a path, inline content, or an open text stream."""
    if isinstance(source, io.TextIOBase):
        return source.read()
    if isinstance(source, Path):
        return source.read_text()
    text = str(source)
    if "\n" not in text and len(text) < 1024:
        try:
            if Path(text).exists():
                return Path(text).read_text()
        except OSError:
            pass
    return text


def load_network(source: str | Path | io.TextIOBase) -> Network:
    """Parse the network JSON (buses[], lines[], dg_units[], converter)."""
    data = json.loads(_read_source(source))
    try:
        buses = tuple(Bus(**b) for b in data["buses"])
        lines = tuple(Line(**l) for l in data["lines"])
        units = tuple(DGUnit(**u) for u in data["dg_units"])
        conv = Converter(**data["converter"])
    except KeyError as exc:
        raise GridDataError(f"network file missing section {exc}") from None
    except TypeError as exc:
        raise GridDataError(f"network file field error: {exc}") from None
    return Network(
        buses=buses,
        lines=lines,
        dg_units=units,
        converter=conv,
        slack_bus=data.get("slack_bus", 1),
        name=data.get("name", ""),
    )


def _data_path(name: str) -> Path:
    return Path(__file__).parent / "data" / name


def bundled_network() -> Network:
    """The packaged 33-bus hybrid test system."""
    return load_network(_data_path("ieee33_hybrid.json"))


def bundled_scenario(network: Network | None = None) -> Scenario:
    """The packaged 24-hour scenario; reserve sized from the given network.

    The bundled system runs a 0.3% spinning reserve: its committed
    capacity margin over demand plus losses bottoms out near 0.9% at the
    peak hour, so the generic 5% default would be unsatisfiable here.
    """
    peak = network.total_ac_peak() if network is not None else None
    return load_scenario(_data_path("scenario_24h.csv"), ac_peak_kw=peak,
                         reserve_fraction=0.003)

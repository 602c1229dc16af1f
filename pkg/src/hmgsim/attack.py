"""False-data injection against meter streams and the operator's response.

The attacked meters report a scaled version of the true demand. At the
onset hour the control center sees phantom excess generation and reacts
on the false picture: every dispatchable machine ramps down as far as
one hour allows, and if excess remains, the unit whose output sits
closest to the remainder receives an emergency shutdown. The moment the
real balance breaks, feeders shed load; from then on the operator works
from the physical signal rather than the meters, restoring generation
under ramp limits (shut units return after a minimum downtime, ramping
from zero) until no load is shed, then settles back to merit-order
tracking. Energy not supplied is billed at the scenario's penalty price.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .detector import Decision, DetectorParams, DetectorRegistry, process_measurement
from .grid import DGUnit, Network, Scenario, bus_load, res_output
from .powerflow import ac_bus_order, solve_radial_batch
from .scheduler import Schedule, operating_cost

__all__ = [
    "AttackSpec",
    "HourImpact",
    "ImpactReport",
    "DecisionLogRow",
    "inject",
    "operator_response",
    "run_attack_scenario",
    "detection_pipeline_replay",
    "true_bus_loads",
]

_SHED_TOL = 0.5       # kW below which a deficit counts as numerically balanced
_SHUTDOWN_TOL = 1.0   # kW of residual excess that still forces a shutdown


@dataclass(frozen=True)
class AttackSpec:
    """Which meters lie, when, and how hard (hours are 1-based)."""

    target_buses: tuple[int, ...]
    start_hour: int
    duration_hours: int
    severity: float          # fraction of the true value added or removed
    direction: str = "reduce"

    def __post_init__(self):
        if not (0.0 <= self.severity <= 1.0):
            raise ValueError("severity must lie in [0, 1]")
        if self.direction not in ("reduce", "inflate"):
            raise ValueError("direction must be 'reduce' or 'inflate'")
        if self.start_hour < 1 or self.duration_hours < 1:
            raise ValueError("attack window must start at hour >= 1 and last >= 1 hour")

    def active(self, hour_index: int) -> bool:
        return self.start_hour - 1 <= hour_index < self.start_hour - 1 + self.duration_hours

    @property
    def factor(self) -> float:
        return 1.0 - self.severity if self.direction == "reduce" else 1.0 + self.severity

    @classmethod
    def from_json(cls, source: str | Path) -> "AttackSpec":
        text = Path(source).read_text() if Path(str(source)).exists() else str(source)
        raw = json.loads(text)
        return cls(
            target_buses=tuple(raw["targets"]),
            start_hour=int(raw["start_hour"]),
            duration_hours=int(raw["duration"]),
            severity=float(raw["severity"]),
            direction=raw.get("direction", "reduce"),
        )


def true_bus_loads(scenario: Scenario, network: Network) -> tuple[np.ndarray, tuple[int, ...]]:
    """(T, B) true active-power demand per ac bus, plus the bus order."""
    order = ac_bus_order(network)
    loads = np.zeros((scenario.horizon, len(order)))
    for j, bus_id in enumerate(order):
        bus = network.bus(bus_id)
        for t in range(scenario.horizon):
            loads[t, j] = bus_load(bus, t, scenario)[0]
    return loads, order


def inject(true_measurements: np.ndarray, bus_ids: Sequence[int],
           spec: AttackSpec) -> np.ndarray:
    """Tamper a (T, B) measurement matrix according to the attack window."""
    out = np.array(true_measurements, dtype=float, copy=True)
    cols = [j for j, b in enumerate(bus_ids) if b in set(spec.target_buses)]
    for t in range(out.shape[0]):
        if spec.active(t):
            out[t, cols] *= spec.factor
    return out


def operator_response(
    outputs: np.ndarray,
    observed_imbalance: float,
    units: Sequence[DGUnit],
    on: np.ndarray | None = None,
) -> tuple[np.ndarray, list[str]]:
    """One-hour reaction to an observed imbalance (positive = excess supply).

    Excess: every committed dispatchable unit backs off, the hour's ramp
    capability split in proportion to each unit's own headroom; a
    leftover beyond the fleet's ramping reach shuts down the single unit
    whose post-ramp output lies closest to that leftover (ties fall to
    the lower roster index). Deficits mirror this with ramp-up headroom
    and, if needed, the startup whose reachable output best matches the
    shortfall. Redispatch never violates a ramp or capacity limit; only
    emergency shutdowns bypass the ramp.
    """
    outputs = np.array(outputs, dtype=float, copy=True)
    if on is None:
        on = outputs > 0
    on = np.array(on, dtype=bool, copy=True)
    shutdowns: list[str] = []
    disp = [i for i, u in enumerate(units) if u.dispatchable and on[i]]
    if abs(observed_imbalance) <= _SHUTDOWN_TOL:
        return outputs, shutdowns

    if observed_imbalance > 0:
        caps = np.array([min(units[i].ramp_down, outputs[i] - units[i].p_min)
                         for i in disp])
        caps = np.maximum(caps, 0.0)
        total = caps.sum()
        reduction = min(observed_imbalance, total)
        if total > 0:
            for k, i in enumerate(disp):
                outputs[i] -= reduction * caps[k] / total
        residual = observed_imbalance - reduction
        if residual > _SHUTDOWN_TOL and disp:
            victim = min(disp, key=lambda i: (abs(outputs[i] - residual), i))
            shutdowns.append(units[victim].id)
            outputs[victim] = 0.0
            on[victim] = False
    else:
        deficit = -observed_imbalance
        caps = np.array([min(units[i].ramp_up, units[i].p_max - outputs[i])
                         for i in disp])
        caps = np.maximum(caps, 0.0)
        total = caps.sum()
        increase = min(deficit, total)
        if total > 0:
            for k, i in enumerate(disp):
                outputs[i] += increase * caps[k] / total
        residual = deficit - increase
        if residual > _SHUTDOWN_TOL:
            startable = [i for i, u in enumerate(units)
                         if u.dispatchable and not on[i]]
            if startable:
                reach = {i: min(units[i].ramp_up, units[i].p_max) for i in startable}
                pick = min(startable, key=lambda i: (abs(reach[i] - residual), i))
                outputs[pick] = reach[pick]
    return outputs, shutdowns


@dataclass(frozen=True)
class HourImpact:
    hour: int                      # 1-based
    observed_imbalance_kw: float   # positive = phantom excess seen by the operator
    redispatch_kw: dict[str, float]  # realized output minus baseline, per unit
    emergency_shutdowns: tuple[str, ...]
    load_shed_kw: float
    loss_kw: float
    ramp_reduction_kw: float = 0.0  # meter-driven backoff applied this hour


@dataclass(frozen=True)
class ImpactReport:
    hours: tuple[HourImpact, ...]
    shed_kwh: float
    ens_cost: float
    operation_cost: float          # realized generation cost plus the penalty
    realized: Schedule

    def __post_init__(self):
        total = sum(h.load_shed_kw for h in self.hours)
        if abs(total - self.shed_kwh) > 1e-6:
            raise ValueError("report totals must equal the sum of hourly entries")


class _FleetState:
    """Realized per-unit outputs and downtime bookkeeping during the run."""

    def __init__(self, network: Network, schedule: Schedule):
        self.units = network.dg_units
        self.idx = {u.id: i for i, u in enumerate(self.units)}
        self.schedule = schedule
        self.outputs = schedule.p_g[0].astype(float).copy()
        self.on = schedule.u[0].astype(bool).copy()
        self.down_since = np.full(len(self.units), -10_000)

    def baseline_hour(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        return (self.schedule.p_g[t].astype(float).copy(),
                self.schedule.u[t].astype(bool).copy())


def _dc_export_cap(network: Network, scenario: Scenario, t: int,
                   outputs: np.ndarray) -> np.ndarray:
    """Clip dc-side dispatch so the converter never exceeds its rating."""
    conv = network.converter
    dc_ids = {u.id for u in network.dc_units()}
    cols = [i for i, u in enumerate(network.dg_units) if u.id in dc_ids]
    export = outputs[cols].sum() - scenario.dc_load_demand[t]
    max_export = -conv.p_min
    if export > max_export:
        scale = (max_export + scenario.dc_load_demand[t]) / max(outputs[cols].sum(), 1e-9)
        outputs[cols] *= scale
    return outputs


def _merit_allocation(
    state: _FleetState,
    network: Network,
    scenario: Scenario,
    t: int,
    needed_dispatchable: float,
    restart_delay: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Ramp-feasible dispatch toward a target, cheapest units first.

    Shut units rejoin once their downtime passed, ramping from zero.
    Returns (outputs, on) with renewables already filled in.
    """
    units = state.units
    outputs = np.zeros(len(units))
    on = state.on.copy()
    lower = np.zeros(len(units))
    upper = np.zeros(len(units))
    for i, u in enumerate(units):
        if not u.dispatchable:
            outputs[i] = res_output(u, t, scenario)
            on[i] = True
            continue
        if state.on[i]:
            lower[i] = max(u.p_min, state.outputs[i] - u.ramp_down)
            upper[i] = min(u.p_max, state.outputs[i] + u.ramp_up)
        elif t - state.down_since[i] >= restart_delay:
            lower[i] = 0.0
            upper[i] = min(u.p_max, u.ramp_up)  # restart ramps from zero
        else:
            lower[i] = upper[i] = 0.0
    disp = [i for i, u in enumerate(units) if u.dispatchable]
    outputs[disp] = lower[disp]
    remaining = needed_dispatchable - outputs[disp].sum()
    for i in sorted(disp, key=lambda i: (units[i].energy_cost, i)):
        if remaining <= 0:
            break
        add = min(remaining, upper[i] - outputs[i])
        outputs[i] += add
        remaining -= add
    for i in disp:
        became_on = outputs[i] > 0 or (state.on[i] and upper[i] > 0)
        if state.on[i] and not became_on:
            state.down_since[i] = t
        on[i] = became_on
    return outputs, on


def _deficit_after_shedding(network, scenario, t, outputs, on, units):
    """Fixed-point solve of shed = unserved demand + losses at the shed flows."""
    order = ac_bus_order(network)
    idx = {b: j for j, b in enumerate(order)}
    true_p = np.zeros(len(order))
    true_q = np.zeros(len(order))
    for b in network.ac_buses:
        lp, lq = bus_load(b, t, scenario)
        true_p[idx[b.id]] = lp
        true_q[idx[b.id]] = lq
    gen = np.zeros(len(order))
    dc_ids = {u.id for u in network.dc_units()}
    dc_gen = 0.0
    for i, u in enumerate(units):
        if not on[i]:
            continue
        if u.id in dc_ids:
            dc_gen += outputs[i]
        elif u.bus in idx:
            gen[idx[u.bus]] += outputs[i]
    p_conv = scenario.dc_load_demand[t] - dc_gen
    p_conv = float(np.clip(p_conv, network.converter.p_min, network.converter.p_max))
    gen[idx[network.converter.ac_bus]] += -p_conv

    total_true = true_p.sum()
    shed = 0.0
    loss = 0.0
    residual = 0.0
    for _ in range(4):
        served_frac = 1.0 - shed / max(total_true, 1e-9)
        p = (gen - true_p * served_frac)[:, None]
        q = (-true_q * served_frac)[:, None]
        res = solve_radial_batch(network, p, q)[0]
        if not res.converged:
            break
        # every injection (swing included) is specified, so the slack's
        # residual is exactly the power nobody supplies (negative: excess)
        residual = res.slack_injection_kw
        loss = res.total_loss
        new_shed = max(0.0, shed + residual)
        if abs(new_shed - shed) < 0.05:
            shed = new_shed
            break
        shed = new_shed
    if shed <= _SHED_TOL:
        return 0.0, loss, p_conv, residual
    return shed, loss, p_conv, 0.0


def run_attack_scenario(
    scenario: Scenario,
    network: Network,
    schedule: Schedule,
    spec: AttackSpec,
    *,
    restart_delay: int = 1,
) -> ImpactReport:
    """Replay the horizon under tampered meters and account for the damage.

    The baseline schedule is followed until the operator reacts to the
    phantom imbalance at the attack onset. Once real load is shed the
    operator stops trusting meter aggregates and restores generation at
    best ramp speed until the deficit clears, then tracks demand at
    merit order for the rest of the horizon.
    """
    units = network.dg_units
    missing = [b for b in spec.target_buses if b not in {x.id for x in network.buses}]
    if missing:
        raise ValueError(f"attack targets unknown buses {missing}")
    true_loads, bus_order = true_bus_loads(scenario, network)
    observed_loads = inject(true_loads, bus_order, spec)

    state = _FleetState(network, schedule)
    hours: list[HourImpact] = []
    realized_p = np.zeros_like(schedule.p_g, dtype=float)
    realized_u = np.zeros_like(schedule.u)
    emergency_mode = False
    loss_est = 0.0

    for t in range(scenario.horizon):
        base_out, base_on = state.baseline_hour(t)
        observed_gap = float(true_loads[t].sum() - observed_loads[t].sum())
        shutdowns: tuple[str, ...] = ()
        ramp_reduction = 0.0
        took_allocation = emergency_mode

        if not emergency_mode:
            outputs, on = base_out, base_on
            # renewables always produce their available power
            for i, u in enumerate(units):
                if not u.dispatchable:
                    outputs[i] = res_output(u, t, scenario)
                    on[i] = True
            if abs(observed_gap) > _SHUTDOWN_TOL:
                # the operator trusts the meters and rebalances on false data
                if observed_gap > 0:
                    capability = sum(
                        max(0.0, min(u.ramp_down, outputs[i] - u.p_min))
                        for i, u in enumerate(units) if u.dispatchable and on[i])
                    ramp_reduction = min(observed_gap, capability)
                outputs, downed = operator_response(outputs, observed_gap, units, on)
                for uid in downed:
                    i = state.idx[uid]
                    on[i] = False
                    state.down_since[i] = t
                shutdowns = tuple(downed)
            outputs = _dc_export_cap(network, scenario, t, outputs)
            shed, loss_kw, p_conv, _ = _deficit_after_shedding(
                network, scenario, t, outputs, on, units)
        else:
            # track the physical demand: reallocate until the dispatch and
            # the solved losses agree, or the fleet's bounds bind
            demand = float(true_loads[t].sum()) + scenario.dc_load_demand[t]
            res_kw = sum(res_output(u, t, scenario) for u in units if not u.dispatchable)
            needed = demand + loss_est - res_kw
            snapshot = (state.outputs.copy(), state.on.copy(), state.down_since.copy())
            best = None
            prev_gap = None
            for _ in range(4):
                state.outputs, state.on, state.down_since = (
                    snapshot[0].copy(), snapshot[1].copy(), snapshot[2].copy())
                outputs, on = _merit_allocation(state, network, scenario, t,
                                                needed, restart_delay)
                outputs = _dc_export_cap(network, scenario, t, outputs)
                shed, loss_kw, p_conv, resid = _deficit_after_shedding(
                    network, scenario, t, outputs, on, units)
                gap = shed + resid  # unmet power; negative means excess
                if best is None or abs(gap) < abs(best[0]):
                    best = (gap, shed, loss_kw, p_conv, outputs, on,
                            state.down_since.copy())
                if abs(gap) < 0.5:
                    break
                if prev_gap is not None and abs(gap) > abs(prev_gap) - 0.05:
                    break  # bounds binding; further retargeting cannot help
                prev_gap = gap
                needed += gap
            _, shed, loss_kw, p_conv, outputs, on, down_since = best
            state.down_since = down_since
        loss_est = loss_kw
        if shed > 0:
            emergency_mode = True  # stays latched: meters are no longer trusted

        state.outputs = outputs
        state.on = on
        realized_p[t] = np.where(on, outputs, 0.0)
        realized_u[t] = on.astype(np.int8)
        hours.append(HourImpact(
            hour=t + 1,
            observed_imbalance_kw=observed_gap,
            redispatch_kw={u.id: float(realized_p[t, i] - schedule.p_g[t, i])
                           for i, u in enumerate(units)
                           if abs(realized_p[t, i] - schedule.p_g[t, i]) > 1e-6},
            emergency_shutdowns=shutdowns,
            load_shed_kw=float(shed),
            loss_kw=float(loss_kw),
            ramp_reduction_kw=float(ramp_reduction),
        ))

    p_conv_series = np.array([
        float(np.clip(
            scenario.dc_load_demand[t]
            - sum(realized_p[t, i] for i, u in enumerate(units)
                  if u.id in {x.id for x in network.dc_units()}),
            network.converter.p_min, network.converter.p_max))
        for t in range(scenario.horizon)])
    realized = Schedule(unit_ids=tuple(u.id for u in units),
                        p_g=realized_p, u=realized_u, p_conv=p_conv_series)
    shed_kwh = float(sum(h.load_shed_kw for h in hours))
    ens = shed_kwh * scenario.ens_penalty
    gen_cost = operating_cost(realized, units)
    return ImpactReport(
        hours=tuple(hours),
        shed_kwh=shed_kwh,
        ens_cost=ens,
        operation_cost=gen_cost + ens,
        realized=realized,
    )


# ---------------------------------------------------------------------------
# detection pipeline wiring

@dataclass(frozen=True)
class DecisionLogRow:
    hour: str
    meter_id: str
    measured_kw: float
    forecast_kw: float
    sample: str       # "0", "1", or "direct"
    cum_log_ratio: float
    decision: Decision


def detection_pipeline_replay(
    measured: Mapping[str, np.ndarray],
    model,
    params: DetectorParams,
    *,
    registry: DetectorRegistry | None = None,
    start_hour: int = 0,
) -> list[DecisionLogRow]:
    """Run every meter's received series through forecast and detection.

    Forecasts are one-step-ahead predictions from the received history
    (the forecaster sees what the control center sees). The first
    ``window`` hours of each series only warm the lag buffer;
    ``start_hour`` anchors the calendar features when the series is a
    slice of a longer history.
    """
    from .forecaster import build_windows  # local import to keep module deps thin
    from .blstm import model_forward

    if model is None:
        raise ValueError("a trained forecaster model is required")
    registry = registry or DetectorRegistry()
    log: list[DecisionLogRow] = []
    for meter_id in sorted(measured):
        series = np.asarray(measured[meter_id], dtype=float)
        x, _ = build_windows(series, model.input_window, model.load_min,
                             model.load_max, start_hour)
        span = max(model.load_max - model.load_min, 1e-9)
        forecasts = model_forward(model, x) * span + model.load_min
        forecasts = np.maximum(forecasts, 1e-6)
        for k, forecast in enumerate(forecasts):
            t = k + model.input_window
            value = float(series[t])
            before = registry.state(meter_id)
            ratio = abs(value - forecast) / forecast
            if ratio > params.ue:
                sample = "direct"
            elif ratio > params.le:
                sample = "1"
            else:
                sample = "0"
            decision = process_measurement(meter_id, value, float(forecast),
                                           registry, params)
            after = registry.state(meter_id)
            log.append(DecisionLogRow(
                hour=str(start_hour + t + 1),
                meter_id=meter_id,
                measured_kw=value,
                forecast_kw=float(forecast),
                sample=sample,
                cum_log_ratio=after.cumulative_log_ratio if decision is Decision.CONTINUE
                else _terminal_ratio(before, sample, params),
                decision=decision,
            ))
    return log


def _terminal_ratio(state_before, sample: str, params: DetectorParams) -> float:
    if sample == "direct":
        return 0.0
    step = params.step_one if sample == "1" else params.step_zero
    return state_before.cumulative_log_ratio + step


def replay_pairs(
    rows: Sequence[tuple[str, str, float, float]],
    params: DetectorParams,
    *,
    registry: DetectorRegistry | None = None,
) -> list[DecisionLogRow]:
    """Decision log for explicit (hour, meter, measured, forecast) tuples."""
    registry = registry or DetectorRegistry()
    log: list[DecisionLogRow] = []
    for hour, meter_id, value, forecast in rows:
        before_ratio = registry.state(meter_id).cumulative_log_ratio
        ratio = abs(value - forecast) / forecast
        if ratio > params.ue:
            sample = "direct"
        elif ratio > params.le:
            sample = "1"
        else:
            sample = "0"
        decision = process_measurement(meter_id, float(value), float(forecast),
                                       registry, params)
        if decision is Decision.CONTINUE:
            cum = registry.state(meter_id).cumulative_log_ratio
        elif sample == "direct":
            cum = 0.0
        else:
            cum = before_ratio + (params.step_one if sample == "1" else params.step_zero)
        log.append(DecisionLogRow(hour, meter_id, float(value), float(forecast),
                                  sample, cum, decision))
    return log

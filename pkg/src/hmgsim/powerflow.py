"""Radial ac power flow by the forward-backward sweep method.

The solver works on the ac sub-grid only (the dc side is an aggregate
balance handled by the scheduler). Voltages are per-unit on the network
base (1 MVA, 12.66 kV); injections are given in kW/kvar as net
generation minus load per bus. The nodal injection equations over the
bus admittance matrix serve as an independent verification residual for
solved cases.

Everything here is a pure function of immutable inputs; calls are safe
to run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .grid import Network

__all__ = [
    "PowerFlowResult",
    "AdmittanceView",
    "Violation",
    "PowerFlowStructureError",
    "solve_radial",
    "injection_residual",
    "check_limits",
    "admittance_view",
]

KW_PER_PU = 1000.0  # base power 1 MVA


class PowerFlowStructureError(ValueError):
    """Network is not solvable by the radial sweep (not a tree, bad slack)."""


@dataclass(frozen=True)
class PowerFlowResult:
    bus_ids: tuple[int, ...]
    v_mag: np.ndarray    # per-unit, aligned with bus_ids
    v_ang: np.ndarray    # radians
    line_flow: np.ndarray  # kW, signed, sending-end active power per line
    total_loss: float    # kW
    converged: bool
    iterations: int
    slack_injection_kw: float   # active power the slack bus had to add
    slack_injection_kvar: float
    injections_kw: np.ndarray   # the specified net injections (slack entry excluded)
    injections_kvar: np.ndarray

    def voltage(self, bus_id: int) -> float:
        return float(self.v_mag[self.bus_ids.index(bus_id)])


@dataclass(frozen=True)
class Violation:
    kind: str        # "voltage" | "feeder"
    element: str     # bus id or "from-to" line label
    magnitude: float  # pu for voltage, kW for feeder


@dataclass(frozen=True)
class AdmittanceView:
    """Polar bus admittance matrix of the ac line set."""

    bus_ids: tuple[int, ...]
    y_mag: np.ndarray
    y_ang: np.ndarray


class _RadialStructure:
    """Line ordering and index maps for one network, reused across solves."""

    def __init__(self, network: Network):
        ac = network.ac_buses
        self.bus_ids = tuple(b.id for b in ac)
        self.index = {b: i for i, b in enumerate(self.bus_ids)}
        if network.slack_bus not in self.index:
            raise PowerFlowStructureError("slack bus is not an ac bus")
        self.slack = self.index[network.slack_bus]
        lines = network.ac_lines
        if len(lines) != len(ac) - 1:
            raise PowerFlowStructureError(
                f"radial network needs {len(ac) - 1} ac lines, got {len(lines)}")
        # Orient every line parent -> child by BFS from the slack.
        adj: dict[int, list[tuple[int, int]]] = {i: [] for i in range(len(ac))}
        for li, ln in enumerate(lines):
            a, b = self.index[ln.from_bus], self.index[ln.to_bus]
            adj[a].append((b, li))
            adj[b].append((a, li))
        parent_of: list[tuple[int, int, int] | None] = [None] * len(lines)  # (parent, child, line)
        seen = {self.slack}
        frontier = [self.slack]
        ordered: list[tuple[int, int, int]] = []
        while frontier:
            nxt = []
            for u in frontier:
                for v, li in adj[u]:
                    if v not in seen:
                        seen.add(v)
                        ordered.append((u, v, li))
                        nxt.append(v)
            frontier = nxt
        if len(seen) != len(ac):
            raise PowerFlowStructureError("ac network is not connected")
        self.ordered = ordered  # BFS order: parents first
        self.z = np.array([complex(lines[li].resistance, lines[li].reactance)
                           for _, _, li in ordered])
        self.line_index = [li for _, _, li in ordered]
        self.capacity = np.array([lines[li].capacity for li in range(len(lines))])
        self.lines = lines
        self.n = len(ac)


_STRUCT_CACHE: dict[int, _RadialStructure] = {}


def _structure(network: Network) -> _RadialStructure:
    key = id(network)
    st = _STRUCT_CACHE.get(key)
    if st is None:
        st = _RadialStructure(network)
        if len(_STRUCT_CACHE) > 64:
            _STRUCT_CACHE.clear()
        _STRUCT_CACHE[key] = st
    return st


def _sweep(st: _RadialStructure, s_pu: np.ndarray, tolerance: float,
           max_iterations: int) -> tuple[np.ndarray, np.ndarray, bool, int]:
    """Run the sweep on injection columns s_pu (n_bus, n_cases).

    Returns (V complex, branch currents in BFS order, converged, iterations).
    """
    n, cases = s_pu.shape
    v = np.ones((n, cases), dtype=complex)
    i_branch = np.zeros((len(st.ordered), cases), dtype=complex)
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        v_prev = v.copy()
        # Backward: accumulate branch currents from the leaves up.
        i_node = np.conj(-s_pu / v)  # current drawn at each bus
        i_node[st.slack] = 0.0
        for k in range(len(st.ordered) - 1, -1, -1):
            parent, child, _ = st.ordered[k]
            i_branch[k] = i_node[child]
            i_node[parent] += i_node[child]
        # Forward: update voltages from the slack down.
        for k, (parent, child, _) in enumerate(st.ordered):
            v[child] = v[parent] - st.z[k] * i_branch[k]
        dv = np.max(np.abs(v - v_prev))
        if not np.all(np.isfinite(v)) or np.min(np.abs(v)) < 0.25:
            return v, i_branch, False, it  # voltage collapse
        if dv <= tolerance:
            converged = True
            break
    return v, i_branch, converged, it


def solve_radial(
    network: Network,
    bus_injections: Mapping[int, tuple[float, float]],
    tolerance: float = 1e-8,
    max_iterations: int = 100,
) -> PowerFlowResult:
    """Solve the radial ac power flow for one set of net bus injections.

    ``bus_injections`` maps bus id -> (kW, kvar), generation minus load.
    The slack bus holds 1.0 pu and supplies whatever closes the balance;
    an injection specified at the slack bus is netted off the reported
    slack injection. Divergence is reported via ``converged=False``.
    """
    st = _structure(network)
    s = np.zeros((st.n, 1), dtype=complex)
    for bus_id, (p_kw, q_kvar) in bus_injections.items():
        if bus_id not in st.index:
            continue  # dc-side buses do not enter the ac flow
        if not (math.isfinite(p_kw) and math.isfinite(q_kvar)):
            raise ValueError(f"non-finite injection at bus {bus_id}")
        s[st.index[bus_id], 0] = complex(p_kw, q_kvar) / KW_PER_PU
    v, i_branch, converged, iters = _sweep(st, s, tolerance, max_iterations)
    return _pack_result(network, st, s, v, i_branch, converged, iters)


def _pack_result(network, st, s, v, i_branch, converged, iters, case: int = 0):
    vm = np.abs(v[:, case])
    va = np.angle(v[:, case])
    flows = np.zeros(len(st.lines))
    loss = 0.0
    for k, (parent, child, li) in enumerate(st.ordered):
        ib = i_branch[k, case]
        s_from = v[parent, case] * np.conj(ib)
        flows[li] = s_from.real * KW_PER_PU
        loss += (abs(ib) ** 2) * st.z[k].real
    # Slack balances its subtree flows net of any injection specified there.
    s_slack = 0.0 + 0.0j
    for k, (parent, child, li) in enumerate(st.ordered):
        if parent == st.slack:
            s_slack += v[parent, case] * np.conj(i_branch[k, case])
    s_slack -= s[st.slack, case]
    return PowerFlowResult(
        bus_ids=st.bus_ids,
        v_mag=vm,
        v_ang=va,
        line_flow=flows,
        total_loss=float(loss * KW_PER_PU),
        converged=bool(converged),
        iterations=iters,
        slack_injection_kw=float(s_slack.real * KW_PER_PU),
        slack_injection_kvar=float(s_slack.imag * KW_PER_PU),
        injections_kw=s[:, case].real * KW_PER_PU,
        injections_kvar=s[:, case].imag * KW_PER_PU,
    )


def solve_radial_batch(
    network: Network,
    p_kw: np.ndarray,
    q_kvar: np.ndarray,
    tolerance: float = 1e-8,
    max_iterations: int = 100,
) -> list[PowerFlowResult]:
    """Vectorized solve for several injection columns (buses x cases).

    Rows follow the ac bus order of the network. Used by the scheduler to
    evaluate all 24 hours of a candidate schedule in one sweep.
    """
    st = _structure(network)
    s = (p_kw + 1j * q_kvar) / KW_PER_PU
    v, i_branch, converged, iters = _sweep(st, s, tolerance, max_iterations)
    return [_pack_result(network, st, s, v, i_branch, converged, iters, case=c)
            for c in range(s.shape[1])]


def ac_bus_order(network: Network) -> tuple[int, ...]:
    return _structure(network).bus_ids


def admittance_view(network: Network) -> AdmittanceView:
    st = _structure(network)
    y = np.zeros((st.n, st.n), dtype=complex)
    for ln in st.lines:
        a, b = st.index[ln.from_bus], st.index[ln.to_bus]
        ybr = 1.0 / complex(ln.resistance, ln.reactance)
        y[a, a] += ybr
        y[b, b] += ybr
        y[a, b] -= ybr
        y[b, a] -= ybr
    return AdmittanceView(bus_ids=st.bus_ids, y_mag=np.abs(y), y_ang=np.angle(y))


def injection_residual(network: Network, result: PowerFlowResult) -> np.ndarray:
    """|scheduled - computed| nodal injection per bus, in per-unit.

    Evaluates the active/reactive nodal balance double sums over the bus
    admittance matrix at the solved voltages and compares them with the
    injections the solve was given. Converged results keep the maximum
    residual within the solve tolerance. The slack entry compares against
    the reported slack injection.
    """
    st = _structure(network)
    if result.bus_ids != st.bus_ids:
        raise ValueError("result does not belong to this network")
    adm = admittance_view(network)
    vm, va = result.v_mag, result.v_ang
    # P_j = sum_n Vj Vn Yjn cos(delta_j - delta_n - theta_jn), Q analogous.
    ang = va[:, None] - va[None, :] - adm.y_ang
    vv = vm[:, None] * vm[None, :] * adm.y_mag
    p_calc = np.sum(vv * np.cos(ang), axis=1)
    q_calc = np.sum(vv * np.sin(ang), axis=1)
    p_sched = result.injections_kw / KW_PER_PU
    q_sched = result.injections_kvar / KW_PER_PU
    p_sched = p_sched.copy()
    q_sched = q_sched.copy()
    p_sched[st.slack] += result.slack_injection_kw / KW_PER_PU
    q_sched[st.slack] += result.slack_injection_kvar / KW_PER_PU
    return np.hypot(p_calc - p_sched, q_calc - q_sched)


def check_limits(network: Network, result: PowerFlowResult) -> list[Violation]:
    """Feeder-capacity and bus-voltage violations of a converged solution."""
    st = _structure(network)
    out: list[Violation] = []
    for i, bus_id in enumerate(st.bus_ids):
        bus = network.bus(bus_id)
        v = result.v_mag[i]
        if v < bus.v_min:
            out.append(Violation("voltage", str(bus_id), float(bus.v_min - v)))
        elif v > bus.v_max:
            out.append(Violation("voltage", str(bus_id), float(v - bus.v_max)))
    for li, ln in enumerate(st.lines):
        flow = abs(result.line_flow[li])
        if flow > ln.capacity:
            out.append(Violation("feeder", f"{ln.from_bus}-{ln.to_bus}",
                                 float(flow - ln.capacity)))
    return out

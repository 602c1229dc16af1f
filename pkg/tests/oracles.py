"""Independent reference implementations used only to generate expected values.

Nothing in here may import from the solver paths it checks: the power
flow oracle is a full Newton-Raphson on the nodal equations (the package
solves by forward-backward sweep), the two-bus case is closed form, the
commitment oracle is exact dynamic programming over commitment patterns,
and the sequential-test expectation uses a renewal argument over sample
pairs.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# ---------------------------------------------------------------------------
# power flow

def newton_pf(bus_ids, lines, injections_kw, slack_bus, s_base_kw=1000.0,
              tol=1e-12, max_iter=60):
    """Full Newton-Raphson polar power flow. lines: (from, to, r_pu, x_pu).

    injections_kw: {bus: (p_kw, q_kvar)} net injection, slack entry ignored.
    Returns (v_mag dict, v_ang dict, total_loss_kw).
    """
    n = len(bus_ids)
    idx = {b: i for i, b in enumerate(bus_ids)}
    y = np.zeros((n, n), dtype=complex)
    for f, t, r, x in lines:
        yl = 1.0 / complex(r, x)
        a, b = idx[f], idx[t]
        y[a, a] += yl
        y[b, b] += yl
        y[a, b] -= yl
        y[b, a] -= yl
    g, bsus = y.real, y.imag
    s = idx[slack_bus]
    pq = [i for i in range(n) if i != s]
    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    for bus, (p_kw, q_kvar) in injections_kw.items():
        p_spec[idx[bus]] = p_kw / s_base_kw
        q_spec[idx[bus]] = q_kvar / s_base_kw
    vm = np.ones(n)
    va = np.zeros(n)
    for _ in range(max_iter):
        vc = vm * np.exp(1j * va)
        s_calc = vc * np.conj(y @ vc)
        dp = p_spec - s_calc.real
        dq = q_spec - s_calc.imag
        mism = np.concatenate([dp[pq], dq[pq]])
        if np.max(np.abs(mism)) < tol:
            break
        # Jacobian blocks dP/dVa, dP/dVm, dQ/dVa, dQ/dVm
        j11 = np.zeros((n, n))
        j12 = np.zeros((n, n))
        j21 = np.zeros((n, n))
        j22 = np.zeros((n, n))
        for i in range(n):
            for k in range(n):
                if i == k:
                    j11[i, i] = -s_calc[i].imag - bsus[i, i] * vm[i] ** 2
                    j12[i, i] = s_calc[i].real / vm[i] + g[i, i] * vm[i]
                    j21[i, i] = s_calc[i].real - g[i, i] * vm[i] ** 2
                    j22[i, i] = s_calc[i].imag / vm[i] - bsus[i, i] * vm[i]
                else:
                    ang = va[i] - va[k]
                    gik, bik = g[i, k], bsus[i, k]
                    j11[i, k] = vm[i] * vm[k] * (gik * math.sin(ang) - bik * math.cos(ang))
                    j12[i, k] = vm[i] * (gik * math.cos(ang) + bik * math.sin(ang))
                    j21[i, k] = -vm[i] * vm[k] * (gik * math.cos(ang) + bik * math.sin(ang))
                    j22[i, k] = vm[i] * (gik * math.sin(ang) - bik * math.cos(ang))
        jac = np.block([[j11[np.ix_(pq, pq)], j12[np.ix_(pq, pq)]],
                        [j21[np.ix_(pq, pq)], j22[np.ix_(pq, pq)]]])
        upd = np.linalg.solve(jac, mism)
        va[pq] += upd[:len(pq)]
        vm[pq] += upd[len(pq):]
    vc = vm * np.exp(1j * va)
    s_calc = vc * np.conj(y @ vc)
    loss_kw = float(np.sum(s_calc.real)) * s_base_kw
    return ({b: float(vm[idx[b]]) for b in bus_ids},
            {b: float(va[idx[b]]) for b in bus_ids},
            loss_kw)


def two_bus_exact(r_pu, x_pu, p_pu, q_pu, s_base_kw=1000.0):
    """Closed-form two-bus feeder: 1.0 pu slack, one load. Returns (V2, loss_kw)."""
    c0 = (p_pu ** 2 + q_pu ** 2) * (r_pu ** 2 + x_pu ** 2)
    c1 = 2.0 * (p_pu * r_pu + q_pu * x_pu) - 1.0
    disc = c1 ** 2 - 4.0 * c0
    if disc < 0:
        raise ValueError("no real solution: load beyond deliverability")
    u = (-c1 + math.sqrt(disc)) / 2.0
    loss_pu = (p_pu ** 2 + q_pu ** 2) / u * r_pu
    return math.sqrt(u), loss_pu * s_base_kw


# ---------------------------------------------------------------------------
# unit commitment

def brute_force_commitment(units, demand, horizon, initial_on=True):
    """Exact minimum cost by DP over commitment patterns of all units.

    units: list of dicts {p_min, p_max, cost, s_on, s_off}; one unit may
    carry 'swing': True, meaning it absorbs the residual demand (within
    its box; infeasible states are discarded). Non-swing units dispatch
    greedily by marginal cost, which is exact for this cost model.
    demand: per-hour total demand (no network, no losses).
    Returns the optimal total cost.
    """
    n = len(units)
    swing_idx = next((i for i, u in enumerate(units) if u.get("swing")), None)
    combos = list(itertools.product((0, 1), repeat=n))

    def dispatch_cost(combo, load):
        on = [i for i in range(n) if combo[i]]
        if swing_idx is not None and combo[swing_idx] == 0:
            return None
        free = sorted((i for i in on if i != swing_idx), key=lambda i: units[i]["cost"])
        remaining = load
        if swing_idx is not None:
            remaining -= units[swing_idx]["p_min"]
        total = 0.0
        power = {i: units[i]["p_min"] for i in on}
        remaining -= sum(units[i]["p_min"] for i in free)
        if remaining < -1e-9:
            return None  # minimum generation exceeds the load
        order = free + ([swing_idx] if swing_idx is not None else [])
        order.sort(key=lambda i: units[i]["cost"])
        for i in order:
            take = min(max(remaining, 0.0), units[i]["p_max"] - units[i]["p_min"])
            power[i] += take
            remaining -= take
        if remaining > 1e-9:
            return None  # not enough committed capacity
        return sum(power[i] * units[i]["cost"] for i in on)

    start = tuple([1] * n) if initial_on else tuple([0] * n)
    states = {start: 0.0}
    for t in range(horizon):
        nxt = {}
        for prev, acc in states.items():
            for combo in combos:
                dc = dispatch_cost(combo, demand[t])
                if dc is None:
                    continue
                trans = sum(
                    units[i]["s_on"] * max(0, combo[i] - prev[i])
                    + units[i]["s_off"] * max(0, prev[i] - combo[i])
                    for i in range(n))
                cost = acc + dc + trans
                if combo not in nxt or cost < nxt[combo]:
                    nxt[combo] = cost
        states = nxt
    return min(states.values())


# ---------------------------------------------------------------------------
# sequential test

def renewal_expected_samples(p, ln_l, ln_u, step_one, step_zero):
    """Mean samples to decision when single samples cannot cross a threshold.

    With |step| < min(|ln_l|, ln_u) < 2*|step|, decisions happen at pair
    boundaries: a (0,0) or (1,1) pair terminates, a mixed pair nudges the
    walk by step_one+step_zero and play continues. Drift accumulation
    only matters after ~40 mixed pairs (probability ~(2p(1-p))^40), far
    below double precision.
    """
    assert abs(step_zero) < min(abs(ln_l), ln_u) <= 2 * max(abs(step_zero), step_one)
    q_continue = 2.0 * p * (1.0 - p)
    return 2.0 / (1.0 - q_continue)


def simulate_sprt(p, params_steps, ln_l, ln_u, trials, max_len, seed):
    """Vectorized Monte Carlo of the binary-sample walk.

    Returns (mean samples to decision, fraction accepting the upper
    threshold). Trials still undecided after max_len samples count as
    max_len (with the reference parameters this never happens in 1e5
    trials).
    """
    step_one, step_zero = params_steps
    rng = np.random.default_rng(seed)
    pr = np.zeros(trials)
    n_samples = np.zeros(trials, dtype=np.int64)
    decided = np.zeros(trials, dtype=bool)
    upper = np.zeros(trials, dtype=bool)
    for _ in range(max_len):
        active = ~decided
        if not active.any():
            break
        draws = rng.random(int(active.sum())) < p
        inc = np.where(draws, step_one, step_zero)
        pr[active] += inc
        n_samples[active] += 1
        hit_up = active.copy()
        hit_up[active] = pr[active] >= ln_u
        hit_lo = active.copy()
        hit_lo[active] = pr[active] <= ln_l
        upper[hit_up] = True
        decided |= hit_up | hit_lo
    return float(n_samples.mean()), float(upper.mean())

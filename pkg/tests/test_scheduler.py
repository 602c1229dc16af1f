import json
from dataclasses import replace

import numpy as np
import pytest

from hmgsim import grid, scheduler
from hmgsim.dragonfly import (Population, StepWeights, dragonfly_step,
                              init_population, schedule_weights)
from hmgsim.scheduler import (OptimizerConfig, Schedule, ViolationRecord,
                              ViolationReport, evaluate_constraints,
                              operating_cost, optimize)
from oracles import brute_force_commitment


def _single_unit(cost=0.5, s_on=10.0, s_off=4.0, p_max=200.0):
    return grid.DGUnit(id="G", bus=1, kind="MT", dispatchable=True, p_min=0.0,
                       p_max=p_max, energy_cost=cost, startup_cost=s_on,
                       shutdown_cost=s_off, ramp_up=p_max, ramp_down=p_max)


def _schedule(p, u, conv=None):
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=np.int8)
    conv = np.zeros(p.shape[0]) if conv is None else np.asarray(conv, dtype=float)
    return Schedule(unit_ids=tuple(f"u{i}" for i in range(p.shape[1])),
                    p_g=p, u=u, p_conv=conv)


# operating cost -------------------------------------------------------------

def test_cost_zero_when_never_committed():
    sched = _schedule(np.zeros((4, 1)), np.zeros((4, 1)))
    assert operating_cost(sched, (_single_unit(),), initial_commitment_on=False) == 0.0


def test_cost_single_hour_with_startup():
    sched = _schedule([[100.0]], [[1]])
    unit = _single_unit(cost=0.5, s_on=10.0)
    # 100 kWh at 0.5 plus one startup from the off state
    assert operating_cost(sched, (unit,), initial_commitment_on=False) == pytest.approx(60.0)


def test_cost_shutdown_charged_once():
    sched = _schedule([[100.0], [0.0]], [[1], [0]])
    unit = _single_unit(cost=0.0, s_on=10.0, s_off=4.0)
    # starts committed, stays on, then one shutdown; no startup
    assert operating_cost(sched, (unit,), initial_commitment_on=True) == pytest.approx(4.0)


def test_cost_permutation_invariant():
    rng = np.random.default_rng(0)
    units = tuple(_single_unit(cost=c) for c in (0.2, 0.5, 0.9))
    p = rng.uniform(0, 100, size=(6, 3))
    u = (rng.random((6, 3)) < 0.7).astype(np.int8)
    p = p * u
    sched = _schedule(p, u)
    perm = [2, 0, 1]
    sched_p = _schedule(p[:, perm], u[:, perm])
    units_p = tuple(units[i] for i in perm)
    assert operating_cost(sched, units) == pytest.approx(operating_cost(sched_p, units_p))


def test_cost_rejects_negative_dispatch():
    sched = Schedule(unit_ids=("u0",), p_g=np.array([[-5.0]]),
                     u=np.array([[1]], dtype=np.int8), p_conv=np.zeros(1))
    with pytest.raises(ValueError, match="negative"):
        operating_cost(sched, (_single_unit(),))


# schedule type invariants ----------------------------------------------------

def test_schedule_requires_binary_commitment():
    with pytest.raises(ValueError, match="binary"):
        _schedule([[1.0]], [[2]])


def test_schedule_requires_zero_power_when_off():
    with pytest.raises(ValueError, match="zero"):
        _schedule([[5.0]], [[0]])


def test_violation_report_validates_classes():
    with pytest.raises(ValueError, match="unknown"):
        ViolationReport([ViolationRecord("bogus", 0, 1.0)])
    with pytest.raises(ValueError, match="positive"):
        ViolationReport([ViolationRecord("capacity", 0, 0.0)])
    assert ViolationReport([]).feasible


# constraint evaluation --------------------------------------------------------

def test_published_dispatch_ramp_and_capacity_clean(network, scenario,
                                                    published_schedule):
    report = evaluate_constraints(published_schedule, scenario, network)
    assert report.by_class("ramp") == ()
    assert report.by_class("capacity") == ()
    assert report.by_class("dc_balance") == ()


def test_capacity_violation_magnitude_one(network, scenario, published_schedule):
    p = published_schedule.p_g.copy()
    col = published_schedule.column("FC")
    p[11, col] = network.unit("FC").p_max + 1.0
    bumped = replace(published_schedule, p_g=p)
    report = evaluate_constraints(bumped, scenario, network)
    caps = report.by_class("capacity")
    assert len(caps) == 1
    assert caps[0].magnitude == pytest.approx(1.0)
    assert caps[0].hour == 11


def test_ramp_violation_magnitude(network, scenario, published_schedule):
    p = published_schedule.p_g.copy()
    col = published_schedule.column("MT3")
    unit = network.unit("MT3")
    p[5, col] = p[4, col] + unit.ramp_up + 50.0
    p[6, col] = p[5, col]  # keep the following delta inside the limit
    bumped = replace(published_schedule, p_g=p)
    report = evaluate_constraints(bumped, scenario, network)
    ramps = [r for r in report.by_class("ramp") if r.detail == "MT3"]
    assert ramps and ramps[0].magnitude == pytest.approx(50.0, abs=1e-6)


def test_reserve_uses_committed_capacity_not_dispatch(toy_network):
    # committed capacity (100) equals demand exactly; the 10 kW reserve
    # requirement alone must flag the hour even though dispatch covers load
    scen = grid.Scenario(1, (100.0 / 150.0,), (0.0,), (0.0,), (0.0,), (10.0,))
    sched = Schedule(unit_ids=("CHEAP", "BIG"),
                     p_g=np.array([[100.0, 0.0]]),
                     u=np.array([[1, 0]], dtype=np.int8),
                     p_conv=np.zeros(1))
    report = evaluate_constraints(sched, scen, toy_network)
    reserve = report.by_class("reserve")
    assert len(reserve) == 1
    assert reserve[0].magnitude == pytest.approx(10.0)


def test_dc_balance_violation(network, scenario, published_schedule):
    conv = published_schedule.p_conv.copy()
    conv[3] += 25.0
    bumped = replace(published_schedule, p_conv=conv)
    report = evaluate_constraints(bumped, scenario, network)
    dc = report.by_class("dc_balance")
    assert len(dc) == 1
    assert dc[0].magnitude == pytest.approx(25.0)


def test_powerflow_divergence_reported_as_sentinel(toy_scenario, toy_network):
    huge = grid.Scenario(1, (400.0,), (0.0,), (0.0,), (0.0,), (0.0,))
    sched = Schedule(unit_ids=("CHEAP", "BIG"),
                     p_g=np.zeros((1, 2)), u=np.ones((1, 2), dtype=np.int8),
                     p_conv=np.zeros(1))
    # 60 MW of load on a 150 kW feeder bus: the sweep collapses
    net = grid.load_network(json.dumps({
        "slack_bus": 1,
        "buses": [
            {"id": 1, "subgrid": "ac"},
            {"id": 2, "subgrid": "ac", "peak_active_load": 150.0},
            {"id": 3, "subgrid": "dc"},
        ],
        "lines": [{"from_bus": 1, "to_bus": 2, "resistance": 0.3,
                   "reactance": 0.3, "capacity": 1e5}],
        "dg_units": [
            {"id": "CHEAP", "bus": 1, "kind": "MT", "dispatchable": True,
             "p_min": 0, "p_max": 100, "energy_cost": 0.3, "ramp_up": 100,
             "ramp_down": 100},
            {"id": "BIG", "bus": 1, "kind": "MT", "dispatchable": True,
             "p_min": 0, "p_max": 500, "energy_cost": 1.0, "ramp_up": 500,
             "ramp_down": 500},
        ],
        "converter": {"p_min": -50.0, "p_max": 50.0, "ac_bus": 1, "dc_bus": 3},
    }))
    report = evaluate_constraints(sched, huge, net)
    sentinel = [r for r in report.by_class("voltage") if r.detail == "power flow diverged"]
    assert sentinel and sentinel[0].magnitude == 1.0


# optimization ----------------------------------------------------------------

def test_single_swing_unit_matches_exhaustive(toy_scenario):
    """One dispatchable machine: commitment forced on, output follows demand."""
    net = grid.load_network(json.dumps({
        "slack_bus": 1,
        "buses": [
            {"id": 1, "subgrid": "ac", "peak_active_load": 100.0},
            {"id": 2, "subgrid": "dc"},
        ],
        "lines": [],
        "dg_units": [
            {"id": "ONLY", "bus": 1, "kind": "MT", "dispatchable": True,
             "p_min": 0, "p_max": 500, "energy_cost": 1.0, "startup_cost": 3.0,
             "shutdown_cost": 3.0, "ramp_up": 500, "ramp_down": 500,
             "swing": True},
        ],
        "converter": {"p_min": -50.0, "p_max": 50.0, "ac_bus": 1, "dc_bus": 2},
    }))
    scen = grid.Scenario(24, (1.0,) * 24, (0.0,) * 24, (0.0,) * 24,
                         (0.0,) * 24, (0.0,) * 24)
    sched, cost, report = optimize(scen, net, OptimizerConfig(seed=0, iterations=5))
    assert report.feasible
    assert np.allclose(sched.p_g[:, 0], 100.0)
    # exhaustive search over {off, load}: committing at the load is the optimum
    assert cost == pytest.approx(24 * 100.0 * 1.0)


def test_two_unit_toy_matches_brute_force(toy_network, toy_scenario):
    from conftest import TOY_FACTORS
    units = [
        dict(p_min=0.0, p_max=100.0, cost=0.3, s_on=2.0, s_off=1.0),
        dict(p_min=0.0, p_max=500.0, cost=1.0, s_on=5.0, s_off=5.0, swing=True),
    ]
    optimum = brute_force_commitment(units, [150 * f for f in TOY_FACTORS], 24)
    cfg = OptimizerConfig(population_size=20, iterations=100, seed=3)
    sched, cost, report = optimize(toy_scenario, toy_network, cfg)
    assert report.feasible
    assert cost <= optimum * 1.01


def test_optimize_deterministic(toy_network, toy_scenario):
    cfg = OptimizerConfig(population_size=10, iterations=20, seed=5)
    s1, c1, _ = optimize(toy_scenario, toy_network, cfg)
    s2, c2, _ = optimize(toy_scenario, toy_network, cfg)
    assert c1 == c2
    assert np.array_equal(s1.p_g, s2.p_g)
    assert np.array_equal(s1.u, s2.u)


def test_optimize_respects_bounds(toy_network, toy_scenario):
    cfg = OptimizerConfig(population_size=8, iterations=15, seed=2)
    sched, _, _ = optimize(toy_scenario, toy_network, cfg)
    cheap = toy_network.unit("CHEAP")
    col = sched.column("CHEAP")
    assert np.all(sched.p_g[:, col] <= cheap.p_max + 1e-9)
    assert np.all(sched.p_g[:, col] >= 0.0)


def test_feasible_fitness_equals_cost(toy_network, toy_scenario):
    """With no violations the penalized objective is the bare cost."""
    cfg = OptimizerConfig(population_size=10, iterations=30, seed=1)
    sched, cost, report = optimize(toy_scenario, toy_network, cfg)
    assert report.feasible
    assert cost == pytest.approx(
        operating_cost(sched, toy_network.dg_units, cfg.initial_commitment_on))


def test_infeasible_demand_reports_reserve(toy_network):
    scen = grid.Scenario(2, (5.0, 5.0), (0.0,) * 2, (0.0,) * 2, (0.0,) * 2,
                         (0.0,) * 2)  # 750 kW demand vs 600 kW fleet
    cfg = OptimizerConfig(population_size=8, iterations=10, seed=0)
    sched, cost, report = optimize(scen, toy_network, cfg)
    assert not report.feasible
    assert report.by_class("reserve") or report.by_class("capacity")


# dragonfly मechanics ----------------------------------------------------------

def test_dragonfly_zero_weights_is_fixed_point():
    rng = np.random.default_rng(0)
    pop = init_population(rng, 6, np.zeros(4), np.ones(4),
                          np.array([False, False, True, True]))
    w = StepWeights(separation=0, alignment=0, cohesion=0, food=0, enemy=0,
                    inertia=0, radius=10.0, levy_scale=0.0)
    stepped = dragonfly_step(pop, np.arange(6.0), w, rng)
    assert np.array_equal(stepped.positions, pop.positions)
    assert np.allclose(stepped.steps, 0.0)


def test_dragonfly_isolated_individual_moves_on_food_and_enemy_only():
    rng = np.random.default_rng(1)
    pop = Population(positions=np.array([[0.5, 0.5]]),
                     steps=np.zeros((1, 2)),
                     lo=np.zeros(2), hi=np.ones(2),
                     binary_mask=np.zeros(2, dtype=bool))
    food = np.array([0.9, 0.1])
    # weights small enough that the step clamp (0.1 of the range) stays slack
    w = StepWeights(separation=5, alignment=5, cohesion=5, food=0.1, enemy=0.05,
                    inertia=0.0, radius=1e-9, levy_scale=0.0)
    stepped = dragonfly_step(pop, np.array([1.0]), w, rng, food_position=food)
    # no neighbors: swarm terms vanish; enemy is the individual itself
    expected = 0.1 * (food - pop.positions[0]) + 0.05 * (pop.positions[0] + pop.positions[0])
    assert np.allclose(stepped.steps[0], expected)
    assert np.allclose(stepped.positions[0], pop.positions[0] + expected)


def test_dragonfly_deterministic_for_fixed_seed():
    def run():
        rng = np.random.default_rng(7)
        pop = init_population(rng, 5, np.zeros(3), np.ones(3),
                              np.zeros(3, dtype=bool))
        w = schedule_weights(0, 10, rng=rng)
        return dragonfly_step(pop, np.arange(5.0), w, rng).positions
    assert np.array_equal(run(), run())


def test_dragonfly_rejects_empty_population():
    with pytest.raises(ValueError):
        Population(positions=np.zeros((0, 2)), steps=np.zeros((0, 2)),
                   lo=np.zeros(2), hi=np.ones(2),
                   binary_mask=np.zeros(2, dtype=bool))


def test_dragonfly_monotone_best_fitness():
    rng = np.random.default_rng(3)
    d = 6
    target = np.full(d, 0.3)
    pop = init_population(rng, 12, np.zeros(d), np.ones(d), np.zeros(d, bool))
    best = np.inf
    best_pos = None
    history = []
    for it in range(60):
        fit = np.sum((pop.positions - target) ** 2, axis=1)
        j = int(np.argmin(fit))
        if fit[j] < best:
            best = float(fit[j])
            best_pos = pop.positions[j].copy()
        history.append(best)
        w = schedule_weights(it, 60, rng=rng)
        pop = dragonfly_step(pop, fit, w, rng, food_position=best_pos)
    assert all(b2 <= b1 + 1e-12 for b1, b2 in zip(history, history[1:]))
    assert history[-1] < history[0]

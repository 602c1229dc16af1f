import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hmgsim import grid, scheduler


@pytest.fixture(scope="session")
def network():
    return grid.bundled_network()


@pytest.fixture(scope="session")
def scenario(network):
    return grid.bundled_scenario(network)


TOY_NETWORK = {
    "name": "toy-2unit",
    "slack_bus": 1,
    "buses": [
        {"id": 1, "subgrid": "ac", "v_min": 0.9, "v_max": 1.1,
         "peak_active_load": 150.0, "peak_reactive_load": 0.0},
        {"id": 2, "subgrid": "dc", "v_min": 0.9, "v_max": 1.1,
         "peak_active_load": 0.0, "peak_reactive_load": 0.0},
    ],
    "lines": [],
    "dg_units": [
        {"id": "CHEAP", "bus": 1, "kind": "MT", "dispatchable": True,
         "p_min": 0.0, "p_max": 100.0, "energy_cost": 0.3,
         "startup_cost": 2.0, "shutdown_cost": 1.0,
         "ramp_up": 100.0, "ramp_down": 100.0},
        {"id": "BIG", "bus": 1, "kind": "MT", "dispatchable": True,
         "p_min": 0.0, "p_max": 500.0, "energy_cost": 1.0,
         "startup_cost": 5.0, "shutdown_cost": 5.0,
         "ramp_up": 500.0, "ramp_down": 500.0, "swing": True},
    ],
    "converter": {"p_min": -50.0, "p_max": 50.0, "ac_bus": 1, "dc_bus": 2},
}

TOY_FACTORS = [0.3, 0.3, 0.28, 0.3, 0.35, 0.4, 0.5, 0.65, 0.8, 0.9, 1.0, 1.0,
               0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.75, 0.85, 0.9, 0.7, 0.5, 0.35]


@pytest.fixture(scope="session")
def toy_network():
    return grid.load_network(json.dumps(TOY_NETWORK))


@pytest.fixture(scope="session")
def toy_scenario():
    return grid.Scenario(
        horizon=24,
        ac_load_factor=tuple(TOY_FACTORS),
        dc_load_demand=(0.0,) * 24,
        wt_pattern=(0.0,) * 24,
        pv_pattern=(0.0,) * 24,
        reserve_requirement=(0.0,) * 24,
    )


# Hourly dispatch published for this system (nine units, 24 hours), used as a
# replay fixture for constraint checks and the attack baseline cross-check.
PUBLISHED_DISPATCH = {
    "PV1": [0, 0, 0, 0, 0, 0, 27.25, 62.5, 85, 97.5, 117, 117.5, 115.3, 125,
            117.5, 87.5, 65, 47.5, 10, 0, 0, 0, 0, 0],
    "WT1": [23.8, 23.8, 17.8, 30, 40.8, 36, 48, 52, 52, 60, 58, 62, 58, 54,
            57, 59.6, 66, 70, 80, 90, 84, 78, 72, 44],
    "FC": [438.6, 545.3, 482.5, 440.1, 549.9, 572.2, 469.8, 579.4, 635.8,
           590.9, 681.2, 700, 684, 669.1, 675.3, 606.1, 604.7, 576.7, 685.2,
           629.5, 584.1, 559.5, 451.2, 341.6],
    "MT1": [133.2, 191.6, 251, 214.7, 274.5, 294.9, 242, 298.5, 299.8, 240,
            211.7, 235.4, 236, 295, 295.1, 282.8, 223.4, 189.1, 182.5, 237.9,
            220.7, 161.9, 101.9, 43.09],
    "MT2": [564.1, 650.1, 552.4, 585.8, 604.7, 591.5, 678.4, 743.8, 928.8,
            1113, 1298, 1300, 1300, 1300, 1300, 1300, 1300, 1153, 1300, 1300,
            1300, 1274, 1089, 1020],
    "MT3": [1098.3, 1037, 947.85, 1031, 1100, 1100, 1100, 1084.7, 1066,
            1068.6, 1100, 1100, 1100, 1100, 992.28, 1084.2, 1080.7, 1021.8,
            899.47, 967.5, 1100, 1068.7, 1021.7, 1093.9],
    "WT2": [65.45, 65.45, 48.95, 82.5, 112.2, 99, 132, 143, 143, 165, 159.5,
            170.5, 159.5, 148.5, 156.8, 163.9, 181.5, 192.5, 220, 247.5, 231,
            214.5, 198, 121],
    "WT3": [53.55, 53.55, 40.05, 67.5, 91.8, 81, 108, 117, 117, 135, 130.5,
            139.5, 130.5, 121.5, 128.3, 134.1, 148.5, 157.5, 180, 202.5, 189,
            175.5, 162, 99],
    "PV2": [0, 0, 0, 0, 0, 0, 43.6, 100, 136, 156, 187.2, 188, 184.4, 200,
            188, 140, 104, 76, 16, 0, 0, 0, 0, 0],
}


@pytest.fixture(scope="session")
def published_schedule(network, scenario):
    ids = tuple(u.id for u in network.dg_units)
    p_g = np.column_stack([PUBLISHED_DISPATCH[i] for i in ids])
    u = np.ones_like(p_g, dtype=np.int8)
    dc_ids = {x.id for x in network.dc_units()}
    dc_cols = [i for i, uid in enumerate(ids) if uid in dc_ids]
    p_conv = np.array(scenario.dc_load_demand) - p_g[:, dc_cols].sum(axis=1)
    return scheduler.Schedule(unit_ids=ids, p_g=p_g, u=u, p_conv=p_conv)


@pytest.fixture(scope="session")
def baseline_schedule(network, scenario):
    """Deterministic optimizer baseline shared by the slower tests."""
    cfg = scheduler.OptimizerConfig(population_size=24, iterations=60, seed=0)
    schedule, cost, report = scheduler.optimize(scenario, network, cfg)
    return schedule, cost, report


@pytest.fixture(scope="session")
def trained_model():
    """A small trained forecaster plus its training series."""
    from hmgsim import forecaster as fc
    series = fc.generate_load(fc.SyntheticLoadConfig(days=40))
    cfg = fc.TrainingConfig(epochs=10, seed=0, hidden=16)
    return fc.train(series, cfg).model, series

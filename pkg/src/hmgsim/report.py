"""Deterministic report files: delimited tables plus rendered figures.

Every table is written with a fixed column order, fixed numeric
precision, and a header comment carrying the seed and a hash of the
originating configuration, so a rerun with identical inputs produces
byte-identical files. Figures render through the Agg backend next to
the tables they illustrate.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .attack import DecisionLogRow, ImpactReport
from .detector import DetectorParams
from .grid import Network, Scenario
from .scheduler import Schedule, ViolationReport

__all__ = [
    "config_hash",
    "write_table",
    "schedule_tables",
    "attack_table",
    "decision_table",
    "metrics_table",
    "render_schedule_figures",
    "render_attack_figure",
    "render_training_figures",
    "render_detection_figure",
]

_FLOAT_FMT = "{:.4f}"


def config_hash(payload: dict) -> str:
    """Short stable digest of the run configuration."""
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _fmt(value) -> str:
    if isinstance(value, float):
        return _FLOAT_FMT.format(value)
    return str(value)


def write_table(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[Sequence],
    *,
    seed: int | None,
    cfg_hash: str,
    fmt: str = "csv",
    footer: Sequence[str] = (),
) -> Path:
    """Write rows as CSV or JSON with the standard provenance header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [list(r) for r in rows]
    if fmt == "csv":
        lines = [f"# seed={seed} config={cfg_hash}"]
        lines.append(",".join(columns))
        for r in rows:
            lines.append(",".join(_fmt(v) for v in r))
        lines.extend(footer)
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "json":
        payload = {
            "seed": seed,
            "config": cfg_hash,
            "columns": list(columns),
            "rows": [[(_FLOAT_FMT.format(v) if isinstance(v, float) else v) for v in r]
                     for r in rows],
        }
        if footer:
            payload["footer"] = list(footer)
        path.write_text(json.dumps(payload, indent=1) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def schedule_tables(
    out_dir: Path,
    schedule: Schedule,
    network: Network,
    scenario: Scenario,
    cost: float,
    report: ViolationReport,
    pf_results,
    *,
    seed: int | None,
    cfg_hash: str,
    fmt: str = "csv",
) -> list[Path]:
    """Dispatch table (one row per hour and unit) plus the cost summary."""
    units = {u.id: u for u in network.dg_units}
    rows = []
    cum = 0.0
    u_prev = {uid: 1 for uid in schedule.unit_ids}
    for t in range(schedule.horizon):
        hour_cost = 0.0
        for i, uid in enumerate(schedule.unit_ids):
            unit = units[uid]
            ut = int(schedule.u[t, i])
            hour_cost += ut * schedule.p_g[t, i] * unit.energy_cost
            hour_cost += unit.startup_cost * max(0, ut - u_prev[uid])
            hour_cost += unit.shutdown_cost * max(0, u_prev[uid] - ut)
            u_prev[uid] = ut
        cum += hour_cost
        for i, uid in enumerate(schedule.unit_ids):
            rows.append([t + 1, uid, int(schedule.u[t, i]),
                         float(schedule.p_g[t, i]), float(schedule.p_conv[t]), cum])
    sched_path = write_table(
        out_dir / f"schedule.{fmt}",
        ("hour", "unit_id", "committed", "p_kw", "p_conv_kw", "cost_cum"),
        rows, seed=seed, cfg_hash=cfg_hash, fmt=fmt)

    total_loss = sum(r.total_loss for r in pf_results)
    max_dev = max(float(np.max(np.abs(r.v_mag - 1.0))) for r in pf_results)
    summary_path = write_table(
        out_dir / f"summary.{fmt}",
        ("power_loss_kwh", "total_cost", "max_voltage_deviation_pu", "feasible"),
        [[total_loss, float(cost), max_dev, int(report.feasible)]],
        seed=seed, cfg_hash=cfg_hash, fmt=fmt)
    return [sched_path, summary_path]


def attack_table(out_dir: Path, impact: ImpactReport, schedule: Schedule,
                 *, seed: int | None, cfg_hash: str, fmt: str = "csv") -> Path:
    """Hourly unit outputs under attack with the shedding column and totals."""
    cols = ["hour"] + list(schedule.unit_ids) + ["p_conv_kw", "load_shedding_kw"]
    rows = []
    for h in impact.hours:
        t = h.hour - 1
        rows.append([h.hour]
                    + [float(impact.realized.p_g[t, i]) for i in range(len(schedule.unit_ids))]
                    + [float(impact.realized.p_conv[t]), h.load_shed_kw])
    footer = [
        f"# total_shed_kwh={_FLOAT_FMT.format(impact.shed_kwh)}",
        f"# ens_cost={_FLOAT_FMT.format(impact.ens_cost)}",
        f"# operation_cost={_FLOAT_FMT.format(impact.operation_cost)}",
    ]
    return write_table(out_dir / f"attack.{fmt}", cols, rows,
                       seed=seed, cfg_hash=cfg_hash, fmt=fmt, footer=footer)


def decision_table(out_dir: Path, log: Sequence[DecisionLogRow],
                   *, seed: int | None, cfg_hash: str, fmt: str = "csv") -> Path:
    rows = [[r.hour, r.meter_id, r.measured_kw, r.forecast_kw, r.sample,
             r.cum_log_ratio, r.decision.value] for r in log]
    return write_table(
        out_dir / f"decisions.{fmt}",
        ("hour", "meter_id", "measured_kw", "forecast_kw", "sample",
         "cum_log_ratio", "decision"),
        rows, seed=seed, cfg_hash=cfg_hash, fmt=fmt)


def metrics_table(out_dir: Path, results: dict[str, dict[str, float]],
                  *, seed: int | None, cfg_hash: str, fmt: str = "csv") -> Path:
    rows = [[name, m["mape_pct"], m["mae_kw"], m["rmse_kw"]]
            for name, m in results.items()]
    return write_table(out_dir / f"metrics.{fmt}",
                       ("model", "mape_pct", "mae_kw", "rmse_kw"),
                       rows, seed=seed, cfg_hash=cfg_hash, fmt=fmt)


# ---------------------------------------------------------------------------
# figures

def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def render_schedule_figures(out_dir: Path, schedule: Schedule,
                            pf_results) -> list[Path]:
    hours = np.arange(1, schedule.horizon + 1)
    fig, ax = plt.subplots(figsize=(9, 4.5))
    ax.stackplot(hours, schedule.p_g.T, labels=schedule.unit_ids, alpha=0.85)
    ax.plot(hours, schedule.p_conv, "k--", lw=1.2, label="converter")
    ax.set_xlabel("hour")
    ax.set_ylabel("kW")
    ax.set_title("dispatch by unit")
    ax.legend(ncol=5, fontsize=7, loc="upper left")
    p1 = _save(fig, Path(out_dir) / "dispatch_stack.png")

    fig, ax = plt.subplots(figsize=(9, 4))
    vm = np.array([r.v_mag for r in pf_results])
    ax.plot(hours, vm.min(axis=1), label="min bus voltage")
    ax.plot(hours, vm.max(axis=1), label="max bus voltage")
    ax.axhline(0.9, color="r", ls=":", lw=1)
    ax.axhline(1.1, color="r", ls=":", lw=1)
    ax.set_xlabel("hour")
    ax.set_ylabel("pu")
    ax.set_title("voltage envelope")
    ax.legend(fontsize=8)
    p2 = _save(fig, Path(out_dir) / "voltage_profile.png")
    return [p1, p2]


def render_attack_figure(out_dir: Path, impact: ImpactReport) -> Path:
    hours = [h.hour for h in impact.hours]
    shed = [h.load_shed_kw for h in impact.hours]
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar(hours, shed, color="firebrick")
    ax.set_xlabel("hour")
    ax.set_ylabel("load shed (kW)")
    ax.set_title(f"load shedding under attack ({impact.shed_kwh:.0f} kWh total)")
    return _save(fig, Path(out_dir) / "shedding.png")


def render_training_figures(out_dir: Path, histories: dict[str, list[float]],
                            predicted, actual) -> list[Path]:
    fig, ax = plt.subplots(figsize=(8, 4))
    for name, hist in histories.items():
        ax.semilogy(np.arange(1, len(hist) + 1), hist, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training MSE (scaled)")
    ax.legend(fontsize=8)
    p1 = _save(fig, Path(out_dir) / "loss_curve.png")

    fig, ax = plt.subplots(figsize=(10, 4))
    n = min(len(actual), 240)
    ax.plot(actual[:n], label="actual", lw=1.0)
    ax.plot(predicted[:n], label="predicted", lw=1.0)
    ax.set_xlabel("hour")
    ax.set_ylabel("kW")
    ax.set_title("forecast vs actual (test split)")
    ax.legend(fontsize=8)
    p2 = _save(fig, Path(out_dir) / "forecast_vs_actual.png")
    return [p1, p2]


def render_detection_figure(out_dir: Path, log: Sequence[DecisionLogRow],
                            params: DetectorParams) -> Path:
    fig, ax = plt.subplots(figsize=(9, 4))
    xs = np.arange(len(log))
    ys = [r.cum_log_ratio for r in log]
    ax.step(xs, ys, where="mid", marker="o", ms=3)
    ax.axhline(params.ln_u, color="r", ls="--", lw=1, label="attack threshold")
    ax.axhline(params.ln_l, color="g", ls="--", lw=1, label="clear threshold")
    for x, r in zip(xs, log):
        if r.decision.value != "No decision":
            ax.annotate(r.decision.value, (x, ys[x]), fontsize=7,
                        textcoords="offset points", xytext=(0, 8))
    ax.set_xlabel("sample")
    ax.set_ylabel("cumulative log ratio")
    ax.legend(fontsize=8)
    return _save(fig, Path(out_dir) / "sprt_walk.png")

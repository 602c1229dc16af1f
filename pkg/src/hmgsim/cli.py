"""Command-line runner: schedule, attack, train, detect, calibrate, codec-inspect.

Every subcommand reads its inputs (bundled fixtures by default), runs
the corresponding library path, and writes deterministic reports plus
figures into the output directory. Exit codes: 0 success, 1 input or
validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import attack as attack_mod
from . import detector as detector_mod
from . import forecaster as fc
from . import grid, report
from . import lora
from . import scheduler as sched_mod

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_RUNTIME = 2

BUNDLED_ATTACK_SPEC = {
    "targets": [7, 8, 20, 21, 24, 25, 29, 30, 31, 32],
    "start_hour": 12,
    "duration": 5,
    "severity": 0.7,
    "direction": "reduce",
}


class InputError(Exception):
    pass


def _seed(args) -> int:
    env = os.environ.get("HMGSIM_SEED")
    if args.seed is not None:
        return args.seed
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"HMGSIM_SEED={env!r} is not an integer") from None
    return 0


def _load_inputs(args):
    if args.network:
        _require(args.network)
        network = grid.load_network(Path(args.network))
    else:
        network = grid.bundled_network()
    if args.scenario:
        _require(args.scenario)
        scenario = grid.load_scenario(Path(args.scenario),
                                      ac_peak_kw=network.total_ac_peak(),
                                      reserve_fraction=args.reserve_fraction)
    else:
        scenario = grid.bundled_scenario(network)
    return network, scenario


def _require(path: str):
    if not Path(path).exists():
        raise InputError(f"input file not found: {path}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _optimize(network, scenario, seed: int, iterations: int, population: int):
    cfg = sched_mod.OptimizerConfig(population_size=population,
                                    iterations=iterations, seed=seed)
    schedule, cost, violations = sched_mod.optimize(scenario, network, cfg)
    p, q = sched_mod.hourly_injections(schedule, scenario, network)
    from .powerflow import solve_radial_batch
    results = solve_radial_batch(network, p, q)
    bad = [t for t, r in enumerate(results) if not r.converged]
    if bad:
        raise RuntimeError(f"power flow diverged at hour {bad[0] + 1}")
    return schedule, cost, violations, results


def cmd_schedule(args) -> int:
    network, scenario = _load_inputs(args)
    seed = _seed(args)
    cfg_hash = report.config_hash({
        "cmd": "schedule", "network": args.network, "scenario": args.scenario,
        "seed": seed, "iterations": args.iterations, "population": args.population})
    schedule, cost, violations, results = _optimize(
        network, scenario, seed, args.iterations, args.population)
    out = _out_dir(args)
    paths = report.schedule_tables(out, schedule, network, scenario, cost,
                                   violations, results, seed=seed,
                                   cfg_hash=cfg_hash, fmt=args.format)
    if not args.no_figures:
        paths += report.render_schedule_figures(out, schedule, results)
    for p in paths:
        print(p)
    if not violations.feasible:
        print(f"warning: schedule violates constraints: {violations!r}", file=sys.stderr)
    return EXIT_OK


def cmd_attack(args) -> int:
    network, scenario = _load_inputs(args)
    seed = _seed(args)
    if args.attack_spec:
        _require(args.attack_spec)
        spec = attack_mod.AttackSpec.from_json(Path(args.attack_spec))
    else:
        spec = attack_mod.AttackSpec.from_json(json.dumps(BUNDLED_ATTACK_SPEC))
    cfg_hash = report.config_hash({
        "cmd": "attack", "network": args.network, "scenario": args.scenario,
        "seed": seed, "spec": spec.__dict__})
    schedule, _, _, _ = _optimize(network, scenario, seed,
                                  args.iterations, args.population)
    impact = attack_mod.run_attack_scenario(scenario, network, schedule, spec)
    out = _out_dir(args)
    paths = [report.attack_table(out, impact, schedule, seed=seed,
                                 cfg_hash=cfg_hash, fmt=args.format)]
    if not args.no_figures:
        paths.append(report.render_attack_figure(out, impact))
    for p in paths:
        print(p)
    print(f"total shed: {impact.shed_kwh:.1f} kWh, penalty {impact.ens_cost:.0f}")
    return EXIT_OK


def cmd_train(args) -> int:
    seed = _seed(args)
    if args.data:
        _require(args.data)
        series = fc.load_series_csv(args.data)
    else:
        series = fc.generate_load(fc.SyntheticLoadConfig())
    cfg = fc.TrainingConfig(epochs=args.epochs, seed=seed)
    cfg_hash = report.config_hash({"cmd": "train", "data": args.data, "seed": seed,
                                   "epochs": args.epochs})
    result = fc.train(series, cfg)
    lstm_cfg = fc.TrainingConfig(epochs=args.epochs, seed=seed,
                                 bidirectional=False)
    lstm = fc.train(series, lstm_cfg)
    mlp, mlp_hist = fc.train_mlp_baseline(series, fc.TrainingConfig(
        epochs=args.epochs, seed=seed))

    n_train = int(len(series) * cfg.train_fraction)
    test = series[n_train - cfg.window:]
    rows = {}
    preds = {}
    for name, model in (("BLSTM", result.model), ("LSTM", lstm.model)):
        p, a = fc.predict_series(model, test)
        rows[name] = fc.metrics(p, a)
        preds[name] = (p, a)
    p, a = fc.predict_mlp(mlp, test)
    rows["ANN"] = fc.metrics(p, a)

    out = _out_dir(args)
    model_path = out / "model.json"
    fc.save_model(result.model, model_path)
    paths = [model_path,
             report.metrics_table(out, rows, seed=seed, cfg_hash=cfg_hash,
                                  fmt=args.format)]
    if not args.no_figures:
        bp, ba = preds["BLSTM"]
        paths += report.render_training_figures(
            out, {"BLSTM": result.loss_history, "LSTM": lstm.loss_history,
                  "ANN": mlp_hist}, bp, ba)
    for pth in paths:
        print(pth)
    print("test metrics: " + ", ".join(
        f"{k}: mape={v['mape_pct']:.3f}%" for k, v in rows.items()))
    return EXIT_OK


def _load_params(args) -> detector_mod.DetectorParams:
    if args.params:
        _require(args.params)
        return detector_mod.DetectorParams.from_json(Path(args.params).read_text())
    return detector_mod.DetectorParams(**detector_mod.REFERENCE_PARAMS)


def cmd_detect(args) -> int:
    seed = _seed(args)
    params = _load_params(args)
    replay_path = Path(args.replay) if args.replay else grid._data_path("replay_sprt_trace.csv")
    _require(str(replay_path))
    rows = []
    for line in replay_path.read_text().strip().splitlines()[1:]:
        hour, meter, measured, forecast = line.split(",")
        rows.append((hour, meter, float(measured), float(forecast)))
    cfg_hash = report.config_hash({"cmd": "detect", "replay": str(replay_path),
                                   "seed": seed, "params": params.to_json()})
    log = attack_mod.replay_pairs(rows, params)
    out = _out_dir(args)
    paths = [report.decision_table(out, log, seed=seed, cfg_hash=cfg_hash,
                                   fmt=args.format)]
    if not args.no_figures:
        paths.append(report.render_detection_figure(out, log, params))
    for p in paths:
        print(p)
    for r in log:
        print(f"{r.hour} {r.meter_id}: {r.decision.value}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    _require(args.data)
    lines = Path(args.data).read_text().strip().splitlines()
    header = [c.strip().lower() for c in lines[0].split(",")]
    ratios = []
    for line in lines[1:]:
        vals = line.split(",")
        if "ratio" in header:
            ratios.append(float(vals[header.index("ratio")]))
        else:
            measured = float(vals[header.index("measured_kw")])
            forecast = float(vals[header.index("forecast_kw")])
            ratios.append(abs(measured - forecast) / forecast)
    params = detector_mod.calibrate(ratios, p1=args.p1, alpha=args.alpha,
                                    beta=args.beta)
    out = _out_dir(args)
    path = out / "params.json"
    path.write_text(params.to_json() + "\n")
    print(path)
    print(f"le={params.le:.6g} ue={params.ue:.6g} p0={params.p0:.6g}")
    return EXIT_OK


def cmd_codec_inspect(args) -> int:
    _require(args.frame)
    text = "".join(Path(args.frame).read_text().split())
    try:
        blob = bytes.fromhex(text)
    except ValueError:
        raise InputError(f"{args.frame} is not a hex dump")
    if len(blob) == lora.READING_SIZE:
        reading = lora.decode_reading(blob)
        print(f"96-byte meter record, meter {reading.meter_id}")
        print(f"  timestamp:  {reading.timestamp}")
        print(f"  frequency:  {reading.frequency:.2f} Hz  status: {reading.status}")
        p = reading.point
        print(f"  point:      {p.voltage:.3f} V  {p.current:.3f} A  "
              f"{p.active_power:.0f} W  {p.reactive_power:.0f} var  pf={p.power_factor:.4f}")
        for name, block in reading.components.items():
            if block is None:
                print(f"  {name.upper():4}: absent")
            else:
                print(f"  {name.upper():4}: {block.active_power:.0f} W  "
                      f"{block.reactive_power:.0f} var  {block.voltage:.3f} V  "
                      f"{block.current:.3f} A")
        print(f"  converter:  {reading.converter_power:.0f} W")
        return EXIT_OK
    frame = lora.MacFrame.from_bytes(blob)
    print(f"MAC frame: mtype={frame.mtype.name} major={frame.major} "
          f"mic={frame.mic.hex()}")
    if args.keys:
        _require(args.keys)
        key_cfg = json.loads(Path(args.keys).read_text())
        keys = lora.SessionKeys(nwk_key=bytes.fromhex(key_cfg["nwk_key"]),
                                app_key=bytes.fromhex(key_cfg["app_key"]))
        app = lora.open_frame(frame, keys)
        if app is None:
            print("  frame dropped (integrity check failed or discard port)")
            return EXIT_RUNTIME
        print(f"  dev_addr={app.dev_addr.hex()} fcnt={app.fcnt} fport={app.fport} "
              f"({lora.classify_fport(app.fport).value})")
        print(f"  payload: {len(app.frm_payload)} bytes")
        if len(app.frm_payload) == lora.READING_SIZE:
            reading = lora.decode_reading(app.frm_payload)
            print(f"  meter {reading.meter_id} @ {reading.timestamp}")
    else:
        fields = lora._split_mac_payload(frame.mac_payload)
        print(f"  dev_addr={fields.dev_addr.hex()} fcnt={fields.fcnt} "
              f"fport={fields.fport} ({lora.classify_fport(fields.fport).value})")
        print(f"  ciphertext: {len(fields.cipher)} bytes (keys not supplied)")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; inputs are code 1
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="hmgsim",
        description="isolated hybrid microgrid co-simulation toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, figures=True):
        p.add_argument("--seed", type=int, default=None,
                       help="run seed (HMGSIM_SEED env overrides the default)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        if figures:
            p.add_argument("--no-figures", action="store_true",
                           help="skip figure rendering")

    def grid_inputs(p):
        p.add_argument("--scenario", help="scenario CSV (bundled 24 h default)")
        p.add_argument("--network", help="network JSON (bundled 33-bus default)")
        p.add_argument("--reserve-fraction", type=float, default=0.05)
        p.add_argument("--iterations", type=int, default=200)
        p.add_argument("--population", type=int, default=24)

    p = sub.add_parser("schedule", help="day-ahead commitment and dispatch")
    common(p)
    grid_inputs(p)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("attack", help="replay a false-data injection")
    common(p)
    grid_inputs(p)
    p.add_argument("--attack-spec", help="attack spec JSON (bundled scenario default)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("train", help="train the load forecaster")
    common(p)
    p.add_argument("--data", help="hourly load CSV timestamp,load_kw (synthetic default)")
    p.add_argument("--epochs", type=int, default=80)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="sequential detection over a replay")
    common(p)
    p.add_argument("--replay", help="replay CSV hour,meter_id,measured_kw,forecast_kw")
    p.add_argument("--params", help="detector params JSON")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("calibrate", help="fit detector bounds from history")
    common(p, figures=False)
    p.add_argument("--data", required=True,
                   help="CSV with ratio or measured_kw,forecast_kw columns")
    p.add_argument("--p1", type=float, default=0.99)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--beta", type=float, default=0.002)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("codec-inspect", help="decode a hex frame dump")
    p.add_argument("--frame", required=True, help="hex dump file")
    p.add_argument("--keys", help="session keys JSON {nwk_key, app_key} (hex)")
    p.set_defaults(func=cmd_codec_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (grid.GridDataError, lora.CodecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line workflows: generate -> train -> predict/evaluate -> simulate -> report.

Artifacts go to ``--out``, else ``$EACC_OUTPUT_DIR``, else ``./eacc-out``.
Everything written is a pure function of the inputs, seeds and config, so
re-runs are byte-identical; wall-clock timing is only written with
``--timing``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .harness import (CRITERIA, ClosedLoopReport, energy_savings, evaluate_predictors, profile_runtime,
                      run_baseline, run_closed_loop, _write_csv)
from .mpc import MpcConfig
from .predictors import ca_trajectory, cv_trajectory
from .rnn import ModelFormatError, TrainConfig, from_preset, load_model, predict, save_model, train
from .scenario import ScenarioLog, WindowSet, generate_scenario, scenario_windows, split_and_normalize

log = logging.getLogger("eacc")

ENV_OUT = "EACC_OUTPUT_DIR"


class CliError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(ENV_OUT) or "eacc-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _manifest(out: Path, command: str, args, cfg, extra=None) -> Path:
    skip = {"func", "out", "verbose"}
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in skip}
    doc = {"command": command, "args": params, "config": cfg.to_dict(),
           "versions": {"eacc": __version__, "numpy": np.__version__}}
    if extra:
        doc.update(extra)
    return _write_json(out / f"{command}_manifest.json", doc)


def _scenario_files(paths) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(p.glob("*.csv"))
        elif p.is_file():
            files.append(p)
        else:
            raise CliError(f"no such file or directory: {p}")
    files = [f for f in files if f.with_suffix(".json").is_file()]
    if not files:
        raise CliError(f"no scenario logs (csv + json sidecar) found in {', '.join(map(str, paths))}; "
                       "run `eacc generate` first")
    return files


def _load_scenarios(paths) -> list[ScenarioLog]:
    return [ScenarioLog.load(f) for f in _scenario_files(paths)]


def _windows(logs, group, H) -> WindowSet:
    try:
        return WindowSet.concat([scenario_windows(lg, group, H) for lg in logs])
    except ValueError as exc:
        raise CliError(f"cannot build windows: {exc}") from exc


def _load_model(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise CliError(f"model file not found: {path}; run `eacc train` first") from None
    except ModelFormatError as exc:
        raise CliError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(args, cfg) -> None:
    out = _out_dir(args) / "scenarios"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(args.count):
        seed = args.seed + i
        sc = generate_scenario(seed, args.profile, args.vehicles, args.duration, args.dt)
        csv_path, _ = sc.save(out / f"{args.profile}_{seed}.csv")
        written.append(csv_path.name)
    _manifest(out.parent, "generate", args, cfg, {"files": written})
    print(f"wrote {len(written)} scenario(s) to {out}")


def cmd_train(args, cfg) -> None:
    out = _out_dir(args)
    logs = _load_scenarios(args.data)
    ws = _windows(logs, args.group, args.H)
    tr, va, _, norm = split_and_normalize(ws)
    model, batch = from_preset(args.preset, args.cell, tr.n_features, args.H, args.group, seed=args.seed,
                               norm=norm, output_scale=float(norm.max[0]))
    tc = TrainConfig(**{**vars(cfg.train), "seed": args.seed, "batch_size": args.batch or batch,
                        **({"max_epochs": args.epochs} if args.epochs else {})})
    model.meta.update({"preset": args.preset, "seed": args.seed, "windows": len(ws)})
    best, hist = train(model, tr, va, tc)
    name = args.name or f"{args.cell}_{args.group}_H{args.H}"
    save_model(best, out / "models" / f"{name}.json")
    _write_csv(out / "models" / f"{name}_history.csv", ["epoch", "train_mse", "val_mse"],
               [[i, a, b] for i, (a, b) in enumerate(zip(hist["train"], hist["val"]))])
    _manifest(out, "train", args, cfg, {"windows": {"total": len(ws), "train": len(tr), "val": len(va)},
                                        "best_epoch": hist["best_epoch"]})
    print(f"trained {name} on {len(tr)} windows; best epoch {hist['best_epoch']}, "
          f"val MSE {hist['val'][hist['best_epoch']]:.4f}")


def cmd_predict(args, cfg) -> None:
    out = _out_dir(args)
    logs = _load_scenarios(args.data)
    if args.model in ("CV", "CA"):
        H, group, name = args.H, "FG1", args.model
    else:
        model = _load_model(args.model)
        H, group, name = model.H, model.group, Path(args.model).stem
    ws = _windows(logs, group, H)
    _, truth = ws.arrays()
    if name == "CV":
        pred = cv_trajectory(*ws.last_two_speeds(), H)
    elif name == "CA":
        pred = np.maximum(ca_trajectory(*ws.last_two_speeds(), args.dt, H), 0.0)
    else:
        pred = predict(model, ws.with_norm(model.norm).arrays()[0])
    cols = ["source", "start"] + [f"pred_{j}" for j in range(1, H + 1)] + [f"true_{j}" for j in range(1, H + 1)]
    rows = np.column_stack([ws.index, pred, truth]).tolist()
    for r in rows:
        r[0], r[1] = int(r[0]), int(r[1])
    path = _write_csv(out / "predictions" / f"{name}_H{H}.csv", cols, rows)
    _manifest(out, "predict", args, cfg)
    print(f"wrote {len(rows)} forecasts to {path}")


def cmd_evaluate(args, cfg) -> None:
    out = _out_dir(args)
    logs = _load_scenarios(args.data)
    models = [_load_model(p) for p in args.models]
    sets = {}
    for H in sorted(set(args.H) | {m.H for m in models}):
        for group in sorted({m.group for m in models if m.H == H} or {"FG1"}):
            sets[(group, H)] = _windows(logs, group, H)
    if any(len(ws) == 0 for ws in sets.values()):
        raise CliError("empty test set")
    report = evaluate_predictors(models, list(sets.values()), dt=logs[0].dt)
    path = report.to_csv(out / "prediction_report.csv")
    _manifest(out, "evaluate", args, cfg)
    for r in report.rows:
        print(f"{r['model']:>6} {r['group']:>3} H={r['H']:<3} MAE {r['mae']:.3f}  RMSE {r['rmse']:.3f}")
    print(f"wrote {path}")


def cmd_simulate(args, cfg) -> None:
    out = _out_dir(args)
    logs = _load_scenarios(args.data)
    model = _load_model(args.model) if args.model else None
    if "II" in args.criteria and model is None:
        raise CliError("criterion II needs --model")
    report = ClosedLoopReport()
    base_rows = []
    traces = out / "traces"
    for lg in logs:
        for N in args.N:
            mcfg = MpcConfig(**{**vars(cfg.mpc), "N": N})
            tr, b = run_baseline(lg, mcfg, cfg.vehicle)
            base_rows.append(b)
            report.rows.append(b)
            if args.traces:
                tr.to_csv(traces / f"{b.scenario}_baseline_N{N}.csv")
            for crit in args.criteria:
                tr, row = run_closed_loop(lg, crit, mcfg, cfg.vehicle, model=model)
                energy_savings([row], [b])
                report.rows.append(row)
                if args.traces:
                    tr.to_csv(traces / f"{row.scenario}_{crit}_N{N}.csv", timing=args.timing)
                if args.timing:
                    prof = profile_runtime(tr, mcfg.dT)
                    print(f"{row.scenario} {crit} N={N}: mean {1e3 * prof.mean:.1f} ms, "
                          f"p95 {1e3 * prof.p95:.1f} ms, max {1e3 * prof.max:.1f} ms")
    energy_savings(base_rows, base_rows)
    path = report.to_csv(out / "closed_loop.csv", timing=args.timing)
    _manifest(out, "simulate", args, cfg)
    print(f"wrote {path}")


def cmd_report(args, cfg) -> None:
    out = _out_dir(args)
    src = Path(args.input) if args.input else out
    summary = {}
    cl = src / "closed_loop.csv"
    pr = src / "prediction_report.csv"
    if not cl.is_file() and not pr.is_file():
        raise CliError(f"nothing to report in {src}: run `eacc evaluate` and/or `eacc simulate` first")
    if cl.is_file():
        rows = _read_csv(cl)
        groups = {}
        for r in rows:
            if r["criterion"] == "baseline":
                continue
            groups.setdefault((r["criterion"], int(r["N"])), []).append(r)
        fig = []
        for (crit, N), rs in sorted(groups.items()):
            sav = float(np.mean([float(r["savings_pct"]) for r in rs]))
            energy = float(np.sum([float(r["energy_Wh"]) for r in rs]))
            fb = int(np.sum([int(r["fallback_count"]) for r in rs]))
            fig.append([crit, N, len(rs), energy, sav, fb])
        _write_csv(out / "energy_savings.csv",
                   ["criterion", "N", "scenarios", "energy_Wh", "mean_savings_pct", "fallbacks"], fig)
        summary["energy_savings"] = [dict(zip(("criterion", "N", "scenarios", "energy_Wh", "mean_savings_pct",
                                               "fallbacks"), f)) for f in fig]
    if pr.is_file():
        rows = _read_csv(pr)
        by_h = {}
        for r in rows:
            by_h.setdefault(int(r["H"]), []).append(r)
        table = []
        for H, rs in sorted(by_h.items()):
            for r in rs:
                table.append([H, r["model"], r["group"], float(r["mae"]), float(r["rmse"])])
        _write_csv(out / "prediction_table.csv", ["H", "model", "group", "mae", "rmse"], table)
        summary["prediction"] = [dict(zip(("H", "model", "group", "mae", "rmse"), t)) for t in table]
    _write_json(out / "summary.json", summary)
    print(f"wrote report to {out}")


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eacc", description="Energy-saving ACC lab: data, predictors, MPC, evaluation.")
    p.add_argument("--version", action="version", version=f"eacc {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    common.add_argument("--config", help="INI file with [vehicle], [mpc], [train] sections")
    common.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./eacc-out)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="simulate seeded traffic scenarios")
    g.add_argument("--profile", choices=("urban", "highway", "mixed"), default="urban")
    g.add_argument("--count", type=int, default=1, help="scenarios to write (seeds seed..seed+count-1)")
    g.add_argument("--vehicles", type=int, default=10)
    g.add_argument("--duration", type=float, default=600.0, help="seconds")
    g.add_argument("--dt", type=float, default=0.2)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train an LSTM/GRU speed predictor")
    t.add_argument("--data", nargs="+", required=True, help="scenario CSV files or directories")
    t.add_argument("--cell", choices=("lstm", "gru"), default="lstm")
    t.add_argument("--group", choices=("FG1", "FG2"), default="FG2")
    t.add_argument("--H", "--horizon", dest="H", type=int, default=25)
    t.add_argument("--preset", default="desk", help="desk, large or a large-<group>-<cell> name")
    t.add_argument("--epochs", type=int, help="override [train] max_epochs")
    t.add_argument("--batch", type=int, help="override the preset batch size")
    t.add_argument("--name", help="model file stem")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", parents=[common], help="write forecasts for every window of some scenarios")
    pr.add_argument("--model", required=True, help="model JSON, or CV / CA")
    pr.add_argument("--data", nargs="+", required=True)
    pr.add_argument("--H", type=int, default=25, help="horizon for CV/CA")
    pr.add_argument("--dt", type=float, default=0.2)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", parents=[common], help="MAE/RMSE table for models and baselines")
    e.add_argument("--data", nargs="+", required=True)
    e.add_argument("--models", nargs="*", default=[])
    e.add_argument("--H", type=int, nargs="*", default=[25, 50])
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", parents=[common], help="closed-loop MPC runs against logged targets")
    s.add_argument("--data", nargs="+", required=True)
    s.add_argument("--criteria", nargs="+", choices=sorted(CRITERIA), default=["I", "III"])
    s.add_argument("--N", type=int, nargs="+", default=[25])
    s.add_argument("--model", help="model JSON for criterion II")
    s.add_argument("--traces", action="store_true", help="write per-step traces")
    s.add_argument("--timing", action="store_true", help="include wall-clock columns (not reproducible)")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", parents=[common], help="aggregate evaluate/simulate outputs")
    r.add_argument("--input", help="directory holding closed_loop.csv / prediction_report.csv (default: --out)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except (CliError, ConfigError) as exc:
        print(f"eacc {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as exc:
        print(f"eacc {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

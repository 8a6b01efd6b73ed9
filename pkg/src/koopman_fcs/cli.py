"""Command-line entry point: train | run | compare | report."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import config as config_mod
from .koopman import BankFormatError, Dictionary, InsufficientData, KoopmanModelBank, train_bank
from .log import TrajectoryLog
from .report import emit_report, metrics_row, write_csv
from .sim import CONTROLLERS, ConfigError, CoverageError, MissingModel, generate_training_data, run_closed_loop


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(str(exc))
        self.stage = stage


def _load_config(args) -> config_mod.RunConfig:
    overrides = list(args.set or [])
    if args.out is not None:
        overrides.append(f"output_dir={args.out}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return config_mod.load(args.config, overrides)


def _out(cfg) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _bank_path(cfg) -> Path:
    return Path(cfg.output_dir) / cfg.koopman.bank_file


def _load_bank(cfg) -> KoopmanModelBank:
    path = _bank_path(cfg)
    if not path.exists():
        raise MissingModel(f"no model bank at {path}; run 'train' first")
    try:
        return KoopmanModelBank.load(path)
    except BankFormatError as exc:
        raise MissingModel(f"unreadable model bank {path}: {exc}") from None


def cmd_train(cfg) -> Path:
    out = _out(cfg)
    c = cfg.control
    try:
        log = generate_training_data(cfg.training_config(), cfg.motor, c.t_s, c.substeps, c.n_p)
    except CoverageError as exc:
        raise StageError("training data", exc) from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            bank = train_bank(
                log,
                Dictionary.parse(cfg.koopman.dictionary),
                cfg.koopman.tol,
                cfg.koopman.min_pairs,
                cfg.koopman.holdout,
            )
        except (InsufficientData, ValueError) as exc:
            raise StageError("fit", exc) from None
    path = _bank_path(cfg)
    bank.save(path)
    md = bank.metadata
    print(f"model bank: {path}  (k={bank.k}, dictionary={bank.dictionary.spec}, speed={md['speed_rpm']:g} min^-1)")
    print("vector  pairs   residual     holdout_rms_id  holdout_rms_iq")
    for v in range(len(md["samples"])):
        rid, riq = md["holdout_rms"][v]
        print(f"{v:>6}{md['samples'][v]:>7}  {md['residuals'][v]:.3e}   {rid:.4f} A       {riq:.4f} A")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return path


def _log_paths(out: Path, scenario: str, controller: str):
    base = out / "logs" / f"{scenario}_{controller}"
    return base.with_suffix(".csv"), Path(str(base) + "_fine.csv"), base.with_suffix(".json")


def _write_log(out, log):
    csv_path, fine_path, meta_path = _log_paths(out, log.meta["scenario"], log.meta["controller"])
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    log.to_csv(csv_path, fine_path)
    meta_path.write_text(json.dumps(log.meta, indent=2, sort_keys=True) + "\n")


def _simulate(cfg, scenario_name, controller, bank=None):
    scenario = cfg.scenario(scenario_name, controller)
    c = cfg.control
    return run_closed_loop(
        scenario,
        cfg.motor,
        bank=bank,
        t_s=c.t_s,
        substeps=c.substeps,
        n_p=c.n_p,
        delay_compensation=c.delay_compensation,
    )


def cmd_run(cfg, scenario_name, controller):
    if controller not in CONTROLLERS:
        raise ConfigError(f"unknown controller {controller!r}; choose from {', '.join(CONTROLLERS)}")
    out = _out(cfg)
    bank = _load_bank(cfg) if controller == "koopman-mpc" else None
    log = _simulate(cfg, scenario_name, controller, bank)
    _write_log(out, log)
    row = metrics_row(log)
    metrics_path = out / f"{scenario_name}_{controller}_metrics.csv"
    write_csv([row], metrics_path)
    if controller == "foc":
        print(f"carrier frequency: {log.meta['carrier_freq'] / 1e3:.3f} kHz")
    print(
        f"{scenario_name} / {controller}: THD {row['thd_pct']:.2f} %, deviation {row['setpoint_dev_A']:.3f} A, "
        f"f_sw {row['fsw_avg_Hz'] / 1e3:.2f} kHz, settle {row['settle_ms']:.2f} ms"
    )
    return log, row


def cmd_compare(cfg, controllers=CONTROLLERS, figures=True):
    out = _out(cfg)
    bank = _load_bank(cfg) if "koopman-mpc" in controllers else None
    rows, logs = [], {}
    for name in cfg.scenario_names():
        logs[name] = {}
        for ctrl in controllers:
            log = _simulate(cfg, name, ctrl, bank)
            _write_log(out, log)
            rows.append(metrics_row(log))
            logs[name][ctrl] = log
    paths = emit_report(rows, out, logs, figures=figures)
    print((out / "report.txt").read_text(), end="")
    return rows, paths


def cmd_report(cfg, figures=True):
    out = Path(cfg.output_dir)
    metas = sorted((out / "logs").glob("*.json"))
    if not metas:
        raise MissingModel(f"no logs under {out / 'logs'}; run 'run' or 'compare' first")
    rows, logs = [], {}
    order = {n: i for i, n in enumerate(cfg.scenario_names())}
    entries = []
    for m in metas:
        meta = json.loads(m.read_text())
        entries.append((order.get(meta["scenario"], len(order)), meta["scenario"],
                        CONTROLLERS.index(meta["controller"]), meta, m))
    for _, scenario, _, meta, m in sorted(entries, key=lambda e: e[:3]):
        csv_path, fine_path, _ = _log_paths(out, meta["scenario"], meta["controller"])
        log = TrajectoryLog.from_csv(csv_path, fine_path, meta)
        rows.append(metrics_row(log))
        logs.setdefault(scenario, {})[meta["controller"]] = log
    emit_report(rows, out, logs, figures=figures)
    print((out / "report.txt").read_text(), end="")
    return rows


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="random seed (overrides seed)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value, e.g. --set foc.a=3 (repeatable)")
    p = argparse.ArgumentParser(prog="koopman-fcs", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="generate training data and fit the model bank")
    run = sub.add_parser("run", parents=[common], help="simulate one scenario with one controller")
    run.add_argument("--scenario", default="nominal")
    run.add_argument("--controller", default="whitebox-mpc", choices=CONTROLLERS)
    compare = sub.add_parser("compare", parents=[common], help="run all controllers on all scenarios")
    compare.add_argument("--no-figures", action="store_true")
    rep = sub.add_parser("report", parents=[common], help="re-analyse existing logs")
    rep.add_argument("--no-figures", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stage = "config"
    try:
        cfg = _load_config(args)
        stage = args.command
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "run":
            cmd_run(cfg, args.scenario, args.controller)
        elif args.command == "compare":
            cmd_compare(cfg, figures=not args.no_figures)
        else:
            cmd_report(cfg, figures=not args.no_figures)
    except StageError as exc:
        print(f"error [{stage}/{exc.stage}]: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, MissingModel, InsufficientData, CoverageError, OSError, ValueError) as exc:
        print(f"error [{stage}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

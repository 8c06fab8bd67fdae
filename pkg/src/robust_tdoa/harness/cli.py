"""Command-line entry point: ``robust-tdoa <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..calibration import define_weights, select_measurements
from ..measurement import TdoaSet
from ..protocol import KeyMaterial, run_calibration_session
from .config import ConfigError, ScenarioConfig, load_config
from .report import emit_report
from .runner import calibrate, locate_once, run_appendix_experiment, run_scenario, run_trajectory

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CORRUPT = 3

log = logging.getLogger("robust_tdoa")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON scenario file")
    common.add_argument("--seed", type=int, help="override the config rng seed")
    common.add_argument("--trials", type=int, help="override the config trial count")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--format", choices=["csv", "json", "plotdata"], default="csv")
    common.add_argument("--fail-on-corrupt", action="store_true", help="exit 3 if every outcome is corrupt_system")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="robust-tdoa", description="Robust TDOA localization under timing attacks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("calibrate", "compute pair weights from the calibration source"),
        ("locate", "calibrate and localize the configured source once"),
        ("montecarlo", "run a scenario delay sweep"),
        ("trajectory", "localize a moving source at each instant"),
        ("appendix", "measurement-selection experiment under calibration attacks"),
        ("protocol-sim", "simulate a challenge-response calibration session"),
    ]:
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.trials is not None:
        updates["trials"] = args.trials
    return replace(cfg, **updates) if updates else cfg


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1) + "\n")
    return path


def _cmd_calibrate(cfg, args) -> int:
    net = cfg.network()
    weights = calibrate(cfg, net, cfg.attack_vector(), np.random.default_rng(cfg.seed))
    path = _write_json(args.out / "weights.json", weights.to_dict())
    print(f"cfd={weights.cfd:.4f} nonzero={weights.nonzero} -> {path}")
    return EXIT_OK


def _cmd_locate(cfg, args) -> int:
    net = cfg.network()
    rng = np.random.default_rng(cfg.seed)
    attack = cfg.attack_vector()
    weights = calibrate(cfg, net, attack, rng)
    robust, naive = locate_once(cfg, net, weights, cfg.source_point(), attack, rng)
    data = {"weights": weights.to_dict(), "robust": robust.to_dict(), "naive": naive.to_dict()}
    path = _write_json(args.out / "locate.json", data)
    pos = "none" if robust.position is None else np.array2string(robust.position, precision=2)
    print(f"status={robust.status.value} robust={pos} band={robust.band} -> {path}")
    if args.fail_on_corrupt and robust.is_corrupt:
        return EXIT_CORRUPT
    return EXIT_OK


def _cmd_montecarlo(cfg, args) -> int:
    report = run_scenario(cfg)
    path = emit_report(report, args.format, args.out)
    for agg in report.aggregates():
        print(
            f"delay={agg.delay_s:.3e} mean_err={agg.mean_error_m:.3f} "
            f"corrupt={agg.corrupt_fraction:.2f} mean_cfd={agg.mean_cfd:.3f}"
        )
    print(f"-> {path}")
    if args.fail_on_corrupt and all(r.status == "corrupt_system" for r in report.rows):
        return EXIT_CORRUPT
    return EXIT_OK


def _cmd_trajectory(cfg, args) -> int:
    report = run_trajectory(cfg)
    path = emit_report(report, args.format, args.out)
    for r in report.rows:
        print(f"t={r.instant} robust_err={r.robust_error_m:.2f} naive_err={r.naive_error_m:.1f} cfd={r.cfd:.3f}")
    print(f"-> {path}")
    if args.fail_on_corrupt and all(r.status == "corrupt_system" for r in report.rows):
        return EXIT_CORRUPT
    return EXIT_OK


def _cmd_appendix(cfg, args) -> int:
    app = cfg.appendix
    report = run_appendix_experiment(
        app.a_values, app.q_values, app.m, app.n, app.b, cfg.trials,
        np.random.default_rng(cfg.seed), mu=app.mu, sigma=app.sigma, v=cfg.v,
    )
    path = emit_report(report, args.format, args.out)
    print(f"{len(report.rows)} cells -> {path}")
    return EXIT_OK


def _cmd_protocol(cfg, args) -> int:
    net = cfg.network()
    rng = np.random.default_rng(cfg.seed)
    keys = KeyMaterial.generate(rng)
    pc = cfg.protocol
    session = run_calibration_session(
        net, cfg.calib_point(), keys, pc.adversary_model(), pc.iterations,
        flag_probability=pc.flag_probability, rng=rng, params=cfg.params(),
        clock_offsets=cfg.attack_vector(),
    )
    log_path = session.write_event_log(args.out / "events.jsonl")
    batch = session.tdoas
    spec = cfg.selection_spec()
    if spec is not None and spec.m == batch.n:
        batch = TdoaSet(batch.pairs, np.array([select_measurements(r, spec) for r in batch.values]), batch.sigma)
    weights = define_weights(net, cfg.calib_point(), batch.sigma, batch, v=cfg.v)
    _write_json(args.out / "session.json", {"tdoas": session.tdoas.to_dict(), "weights": weights.to_dict()})
    print(
        f"issued={session.issued} samples={session.tdoas.n} shifted={int(session.shifted.sum())} "
        f"cfd={weights.cfd:.4f} -> {log_path}"
    )
    return EXIT_OK


COMMANDS = {
    "calibrate": _cmd_calibrate,
    "locate": _cmd_locate,
    "montecarlo": _cmd_montecarlo,
    "trajectory": _cmd_trajectory,
    "appendix": _cmd_appendix,
    "protocol-sim": _cmd_protocol,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

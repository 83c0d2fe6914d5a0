"""Command-line entry point: ``cooptune {simulate,calibrate,analyze,pe-audit}``.

Exit codes: 0 success, 2 configuration or input error, 3 run halted,
4 calibration data not persistently exciting, 5 gains not Hurwitz.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    analyze_scenario,
    build_analysis,
    build_params,
    build_sim_config,
    config_digest,
    default_config_path,
    load_config,
)
from .errors import CoopTuneError, InfeasibleBounds, InvalidConfig, MalformedLog, NotHurwitz
from .estimation import calibrate_offline, pe_windows
from .io import read_twist_log, write_json, write_report_text, write_run_log, write_twist_log
from .sim import SimLog, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_HALT = 3
EXIT_NOT_PE = 4
EXIT_NOT_HURWITZ = 5


def _err(msg: str) -> None:
    print(f"cooptune: {msg}", file=sys.stderr)


def _config_path(args) -> Path:
    return Path(args.config) if args.config else default_config_path()


def _final_rms(log: SimLog, fraction: float = 0.1) -> float:
    n = max(1, int(len(log) * fraction))
    e = log.e[-n:]
    return float(np.sqrt(np.mean(np.sum(e * e, axis=1))))


def _report_fields(report, kappas, consts=None) -> dict:
    fields = report.summary()
    if consts is not None:
        fields.update({f"const_{k}": float(v) for k, v in consts.__dict__.items()})
    return fields


def cmd_simulate(args) -> int:
    path = _config_path(args)
    try:
        cfg = load_config(path)
        sim_cfg = build_sim_config(cfg, seed=args.seed)
        analysis = build_analysis(cfg, sim_cfg)
    except (InvalidConfig, NotHurwitz) as exc:
        _err(f"config error in {path}: {exc}")
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    log = run(sim_cfg)
    outputs = {
        "run_log": str(write_run_log(out / "run_log.csv", log.data)),
        "twist_log": str(write_twist_log(out / "twist_log.csv", log.twists)),
    }
    summary = {"final_theta_err": float(log.theta_err[-1]), "final_window_rms": _final_rms(log), "halted": log.halt_reason}
    if args.no_adapt:
        base = run(build_sim_config(cfg, seed=args.seed, adaptation=False))
        outputs["run_log_no_adapt"] = str(write_run_log(out / "run_log_no_adapt.csv", base.data))
        rms_on, rms_off = _final_rms(log), _final_rms(base)
        comparison = {
            "rms_adapt": rms_on,
            "rms_no_adapt": rms_off,
            "rms_ratio": rms_off / rms_on if rms_on > 0.0 else math.inf,
        }
        outputs["comparison"] = str(write_json(out / "comparison.json", comparison))
        print(f"final-window RMS tracking error: adapt {rms_on:.3e}, no-adapt {rms_off:.3e}, ratio {comparison['rms_ratio']:.3g}")

    try:
        consts, kappas, report = analyze_scenario(sim_cfg, analysis)
        fields = _report_fields(report, kappas, consts)
    except InfeasibleBounds as exc:
        fields = {"note": f"{exc}"}
    except CoopTuneError as exc:
        fields = {"note": f"stability analysis unavailable: {exc}"}
    outputs["stability_report"] = str(write_report_text(out / "stability_report.txt", fields))
    outputs["stability_report_json"] = str(write_json(out / "stability_report.json", fields))
    manifest = {
        "config_path": str(path),
        "config_digest": config_digest(cfg),
        "seed": sim_cfg.noise.seed,
        "version": __version__,
        "outputs": outputs,
        "summary": summary,
    }
    write_json(out / "manifest.json", manifest)
    print(f"wrote {len(outputs) + 1} files to {out}")
    if log.halt_reason:
        _err(f"run halted: {log.halt_reason}")
        return EXIT_HALT
    return EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        cfg = load_config(_config_path(args))
        est = cfg["estimators"]
        guess = build_params(cfg["theta_guess"], "theta_guess")
        twists = read_twist_log(args.twist_log)
    except MalformedLog as exc:
        _err(f"malformed twist log {args.twist_log}: {exc}")
        return EXIT_CONFIG
    except InvalidConfig as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    window = args.window if args.window is not None else est["window"]
    threshold = args.threshold if args.threshold is not None else est["pe_threshold"]
    if est["sample_interval"] is not None:
        h = float(est["sample_interval"])
    elif twists.shape[0] > 1:
        h = float(np.mean(np.diff(twists[:, 0])))
    else:
        h = float(cfg["run"]["dt"])
    try:
        result = calibrate_offline(
            twists, guess.eta, guess.rho, float(est["mu_attitude"]), float(est["mu_displacement"]),
            float(est["p0"]), h, int(window), float(threshold), float(est["degenerate_tol"]),
        )
    except InvalidConfig as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    fields = {
        "eta_hat": result.eta_hat.as_array().tolist(),
        "rho_hat": result.rho_hat.tolist(),
        "residual_rms_w": result.residual_rms_w,
        "residual_rms_v": result.residual_rms_v,
        "pe_windows": int(result.pe_lambdas.size),
        "pe_lambda_min": float(result.pe_lambdas.min()),
        "pe_verdict": "satisfied" if result.pe_ok else "not satisfied (non-identifiable)",
        "degenerate_spectrum": result.degenerate,
        "skipped_samples": result.skipped,
        "sample_interval": h,
    }
    for k, v in fields.items():
        print(f"{k}: {v}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report_text(out / "calibration_report.txt", fields)
        write_json(out / "calibration_report.json", fields)
    return EXIT_OK if result.pe_ok else EXIT_NOT_PE


def cmd_analyze(args) -> int:
    path = _config_path(args)
    try:
        cfg = load_config(path)
        sim_cfg = build_sim_config(cfg, seed=args.seed)
        analysis = build_analysis(cfg, sim_cfg)
    except NotHurwitz as exc:
        _err(f"gains rejected: {exc}")
        return EXIT_NOT_HURWITZ
    except InvalidConfig as exc:
        _err(f"config error in {path}: {exc}")
        return EXIT_CONFIG
    try:
        consts, kappas, report = analyze_scenario(sim_cfg, analysis)
    except InfeasibleBounds as exc:
        print(f"note: {exc}; no r_z fallback configured (analysis.r_z), margins that need r_z are omitted")
        return EXIT_OK
    fields = _report_fields(report, kappas)
    if report.r_z_fallback:
        print("note: kappa2 = 0, using the configured r_z fallback")
    for k, v in fields.items():
        print(f"{k}: {v}")
    verdict = "satisfied" if report.admissible else "violated"
    print(f"initial guess error {report.r_theta:.6e} vs admissible bound {report.r_theta_bound:.6e}: {verdict}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report_text(out / "stability_report.txt", _report_fields(report, kappas, consts))
        write_json(out / "stability_report.json", _report_fields(report, kappas, consts))
    return EXIT_OK


def cmd_pe_audit(args) -> int:
    try:
        twists = read_twist_log(args.twist_log)
    except MalformedLog as exc:
        _err(f"malformed twist log {args.twist_log}: {exc}")
        return EXIT_CONFIG
    if args.window < 1 or not args.threshold > 0.0:
        _err("window must be a positive integer and threshold positive")
        return EXIT_CONFIG
    lambdas, truncated = pe_windows(twists[:, 4:7], args.window)
    if truncated:
        _err(f"warning: log has {twists.shape[0]} samples, shorter than the window {args.window}; scoring one truncated window")
    for i, lam in enumerate(lambdas):
        print(f"window {i}: lambda_min {lam:.6e} {'pass' if lam > args.threshold else 'fail'}")
    passed = int(np.sum(lambdas > args.threshold))
    print(f"verdict: {'PE satisfied' if passed == lambdas.size else 'PE not satisfied'} ({passed}/{lambdas.size} windows pass)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cooptune", description="Self-tuning cooperative two-arm control toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a closed-loop scenario and write logs")
    p.add_argument("--config", help="scenario YAML (default: bundled scenario)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, help="override the noise seed")
    p.add_argument("--no-adapt", action="store_true", help="also run without adaptation and compare")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="estimate the grasp parameters from a twist log")
    p.add_argument("twist_log")
    p.add_argument("--config", help="estimator settings and initial guess (default: bundled scenario)")
    p.add_argument("--out", help="directory for the calibration report")
    p.add_argument("--window", type=int, help="PE window length in samples")
    p.add_argument("--threshold", type=float, help="PE threshold on lambda_min")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("analyze", help="stability margins for a scenario")
    p.add_argument("--config", help="scenario YAML (default: bundled scenario)")
    p.add_argument("--out", help="directory for the stability report")
    p.add_argument("--seed", type=int, help="override the noise seed")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("pe-audit", help="persistent-excitation audit of a twist log")
    p.add_argument("twist_log")
    p.add_argument("--window", type=int, default=1000, help="window length in samples")
    p.add_argument("--threshold", type=float, default=1e-3, help="threshold on lambda_min")
    p.set_defaults(func=cmd_pe_audit)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NotHurwitz as exc:
        _err(f"gains rejected: {exc}")
        return EXIT_NOT_HURWITZ
    except InvalidConfig as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except CoopTuneError as exc:
        _err(f"run halted: {exc}")
        return EXIT_HALT


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``risloc <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .config import read_config, resolve_scenario
from .crb import bounds
from .geometry import complex_noise, noise_for_snr, noiseless_signal, true_channel
from .harness import ExperimentSpec, block_widths, emit_csv, run_experiment, run_trial, setup_point
from .phase_opt import load_profile, optimize_profile, save_profile
from .tensor import build_kronecker_profile


def _ris(text: str) -> tuple[int, int]:
    try:
        nx, nz = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NxxNz such as 24x24, got {text!r}") from None
    return nx, nz


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _profile_arg(text: str) -> str:
    if text in ("random", "opt1", "opt2") or text.startswith("file:"):
        return text
    raise argparse.ArgumentTypeError("profile must be random, opt1, opt2 or file:<path>")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file or preset name (paper, desk); default desk")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--ris", type=_ris, help="surface size NxxNz, e.g. 24x24")
    common.add_argument("--snr-db", type=_floats, help="SNR in dB; a comma list for sweeps")
    common.add_argument("--profile", type=_profile_arg, default="random")
    common.add_argument("--out", help="output file")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="risloc", description="RIS-aided near-field localisation toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="synthesise one noisy observation")
    sim.add_argument("--profile-out", help="also write the profile used")
    est = sub.add_parser("estimate", parents=[common], help="simulate and estimate one trial")
    est.add_argument("--estimator", choices=("p1", "p2"), default="p1")
    sub.add_parser("bounds", parents=[common], help="PEB and CEB for a profile")
    opt = sub.add_parser("optimize-phase", parents=[common], help="design a bound-minimising profile")
    opt.add_argument("--method", choices=("opt1", "opt2"), default="opt2")
    opt.add_argument("--draws", type=int, default=100)
    sw = sub.add_parser("sweep", parents=[common], help="Monte Carlo sweep written as CSV")
    sw.add_argument("--estimator", choices=("p1", "p2"), default="p1")
    sw.add_argument("--trials", type=int)
    sw.add_argument("--elements", type=_floats, help="sweep the per-axis element count instead of SNR")
    return p


def _scenario(args):
    cfg, trials = resolve_scenario(args.config)
    if args.ris:
        cfg = cfg.replace(n_x=args.ris[0], n_z=args.ris[1])
    return cfg.replace(seed=args.seed), trials


def _profile(args, cfg, eta):
    rng = np.random.default_rng(args.seed)
    if args.profile == "random":
        return build_kronecker_profile(cfg.n_x, cfg.n_z, *block_widths(cfg.n_symbols), rng).matrix
    if args.profile.startswith("file:"):
        return load_profile(args.profile[5:])
    return optimize_profile(eta, cfg, args.profile, rng=rng)[0]


def _apply_snr(args, cfg, eta, W):
    if args.snr_db:
        cfg = cfg.replace(noise_variance=noise_for_snr(noiseless_signal(cfg, eta, W), args.snr_db[0]))
    return cfg


def _emit(args, payload):
    text = json.dumps(payload, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_simulate(args) -> int:
    cfg, _ = _scenario(args)
    eta = true_channel(cfg)
    W = _profile(args, cfg, eta)
    cfg = _apply_snr(args, cfg, eta, W)
    mu = noiseless_signal(cfg, eta, W)
    Y = mu + complex_noise(mu.shape, cfg.noise_variance, np.random.default_rng([args.seed, 1]))
    if args.out:
        save_profile(args.out, Y)
    if args.profile_out:
        save_profile(args.profile_out, W)
    snr = 10 * np.log10(np.mean(np.abs(mu) ** 2) / cfg.noise_variance)
    print(json.dumps({"shape": list(Y.shape), "snr_db": float(snr)}))
    return 0


def cmd_estimate(args) -> int:
    cfg, _ = _scenario(args)
    if args.snr_db:
        spec = ExperimentSpec(cfg, "snr", [args.snr_db[0]], args.estimator, args.profile, 1, args.seed)
    else:
        # keep the scenario's own noise level
        spec = ExperimentSpec(cfg, "elements", [cfg.n_x], args.estimator, args.profile, 1, args.seed)
        if cfg.n_x != cfg.n_z:
            raise SystemExit("non-square surfaces need --snr-db")
    setup = setup_point(spec, 0)
    res = run_trial(setup, spec, 0, 0)
    _emit(args, {"snr_db": setup.snr_db, "failed": res is None, "errors": res})
    return 0 if res is not None else 1


def cmd_bounds(args) -> int:
    cfg, _ = _scenario(args)
    eta = true_channel(cfg)
    W = _profile(args, cfg, eta)
    cfg = _apply_snr(args, cfg, eta, W)
    rep = bounds(eta, W, cfg)
    _emit(args, {"peb": rep.peb, "ceb": rep.ceb, "condition": rep.condition})
    return 0


def cmd_optimize(args) -> int:
    cfg, _ = _scenario(args)
    eta = true_channel(cfg)
    W, peb = optimize_profile(eta, cfg, args.method, n_draws=args.draws, rng=np.random.default_rng(args.seed))
    if args.out:
        save_profile(args.out, W)
    print(json.dumps({"method": args.method, "peb": peb}))
    return 0


def cmd_sweep(args) -> int:
    cfg, preset_trials = _scenario(args)
    extra = {}
    if args.config and args.config not in ("paper", "desk"):
        parser = read_config(args.config)
        if parser.has_section("experiment"):
            extra = dict(parser["experiment"])
    trials = args.trials or int(extra.get("trials", 0)) or preset_trials or 100
    estimator = args.estimator if args.estimator else extra.get("estimator", "p1")
    if args.elements:
        spec = ExperimentSpec(cfg, "elements", [int(v) for v in args.elements], estimator, args.profile,
                              trials, args.seed, snr_db=args.snr_db[0] if args.snr_db else None)
    else:
        snrs = args.snr_db or _floats(extra.get("snr_db", "-10,-5,0,5,10"))
        spec = ExperimentSpec(cfg, "snr", snrs, estimator, args.profile, trials, args.seed)
    rows = run_experiment(spec)
    out = args.out or "sweep.csv"
    emit_csv(rows, out)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "bounds": cmd_bounds,
    "optimize-phase": cmd_optimize,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())

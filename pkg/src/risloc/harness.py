"""Monte Carlo experiment runner with deterministic seeding and CSV output."""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .coarse import coarse_estimate
from .crb import bounds
from .exceptions import UnidentifiableError
from .geometry import ChannelParams, ScenarioConfig, complex_noise, noise_for_snr, noiseless_signal, true_channel
from .phase_opt import load_profile, optimize_profile
from .positioning import locate
from .refine import sage_refine
from .tensor import build_kronecker_profile
from .ulris import make_plan, ulris_estimate

log = logging.getLogger(__name__)

THREADS_ENV = "RISLOC_THREADS"

PARAMS = ("el", "az", "tau", "d")
# position of each parameter inside a path's block of the channel vector
_ETA_INDEX = {"el": 2, "az": 3, "d": 4, "tau": 5}
COLUMNS = (
    ["axis", "value", "estimator", "profile", "snr_db", "n_trials", "n_failed"]
    + [f"rmse_coarse_{p}" for p in PARAMS]
    + [f"rmse_{p}" for p in PARAMS]
    + ["rmse_pos", "rmse_delta"]
    + [f"crb_{p}" for p in PARAMS]
    + ["peb", "ceb"]
)


@dataclass
class ExperimentSpec:
    """One sweep.

    ``axis`` is ``"snr"`` (values in dB) or ``"elements"`` (values are the
    per-axis element count, square surfaces). ``profile`` is ``"random"``
    (Kronecker for ``p1``, tiled orthogonal blocks for ``p2``), ``"opt1"``,
    ``"opt2"`` or ``"file:<path>"``; the last three are unstructured, so
    the coarse stage is skipped and refinement starts from the prior, which
    is the true channel.
    """

    scenario: ScenarioConfig
    axis: str = "snr"
    values: list = field(default_factory=lambda: [0.0])
    estimator: str = "p1"
    profile: str = "random"
    n_trials: int = 100
    seed: int = 0
    snr_db: float | None = None
    t1: int | None = None
    t2: int | None = None
    L1: int = 2
    L2: int = 2
    n_draws: int = 100

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("need at least one trial")
        if not self.values:
            raise ValueError("sweep is empty")
        if self.axis not in ("snr", "elements"):
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if self.estimator not in ("p1", "p2"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if not (self.profile in ("random", "opt1", "opt2") or self.profile.startswith("file:")):
            raise ValueError(f"unknown profile source {self.profile!r}")


@dataclass
class ResultRow:
    values: dict
    wall_time: float = 0.0


def rmse(errors) -> float:
    """Root mean square of a non-empty sequence."""
    errors = [float(e) for e in errors]
    if not errors:
        raise ValueError("rmse of an empty set")
    return math.sqrt(math.fsum(e * e for e in errors) / len(errors))


def trial_rng(seed: int, point: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, point, trial]))


# ---------------------------------------------------------------------------
# Sweep points
# ---------------------------------------------------------------------------


@dataclass
class PointSetup:
    cfg: ScenarioConfig
    eta: ChannelParams
    profile: object
    W: np.ndarray
    mu: np.ndarray
    snr_db: float
    structured: bool


def setup_point(spec: ExperimentSpec, index: int) -> PointSetup:
    """Scenario, truth, profile and noise level shared by every trial of a sweep point."""
    value = spec.values[index]
    cfg = spec.scenario
    if spec.axis == "elements":
        cfg = cfg.replace(n_x=int(value), n_z=int(value))
    eta = true_channel(cfg)
    # one profile for the whole SNR sweep; a fresh one per surface size
    key = index if spec.axis == "elements" else 0
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, key, 2**31 - 1]))
    structured = spec.profile == "random"
    if spec.profile == "random":
        if spec.estimator == "p1":
            t1, t2 = block_widths(cfg.n_symbols) if spec.t1 is None else (spec.t1, spec.t2)
            profile = build_kronecker_profile(cfg.n_x, cfg.n_z, t1, t2, rng)
        else:
            L = spec.L1 * spec.L2
            t1, t2 = block_widths(cfg.n_symbols // L)
            profile = make_plan(cfg.layout, spec.L1, spec.L2, t1, t2, rng)
        W = profile.matrix
    elif spec.profile.startswith("file:"):
        W = profile = load_profile(spec.profile[5:])
    else:
        W, _ = optimize_profile(eta, cfg, spec.profile, n_draws=spec.n_draws, rng=rng)
        profile = W
    mu = noiseless_signal(cfg, eta, W)
    snr = float(value) if spec.axis == "snr" else spec.snr_db
    if snr is not None:
        cfg = cfg.replace(noise_variance=noise_for_snr(mu, snr))
    else:
        snr = float(10 * np.log10(np.mean(np.abs(mu) ** 2) / cfg.noise_variance))
    return PointSetup(cfg, eta, profile, W, mu, snr, structured)


def block_widths(t_block: int) -> tuple[int, int]:
    # most square factorisation of the per-block symbol count
    a = int(math.isqrt(t_block))
    while t_block % a:
        a -= 1
    return t_block // a, a


def _path_errors(est: ChannelParams, eta: ChannelParams) -> list[float]:
    p, q = est[0], eta[0]
    az = float(np.angle(np.exp(1j * (p.phi_az - q.phi_az))))
    return [p.phi_el - q.phi_el, az, p.tau - q.tau, p.d - q.d]


def run_trial(setup: PointSetup, spec: ExperimentSpec, index: int, trial: int):
    """One noisy realisation; returns a dict of errors or ``None`` on failure."""
    cfg, eta = setup.cfg, setup.eta
    rng = trial_rng(spec.seed, index, trial)
    Y = setup.mu + complex_noise(setup.mu.shape, cfg.noise_variance, rng)
    S = len(eta)
    try:
        if not setup.structured:
            coarse = eta.copy()
            refined = sage_refine(Y, coarse, setup.W, cfg).params
            sol = locate(refined, setup.W, cfg)
            coarse_err = [float("nan")] * 4
        elif spec.estimator == "p1":
            coarse = coarse_estimate(Y, setup.profile, cfg, n_paths=S).params
            refined = sage_refine(Y, coarse, setup.profile, cfg).params
            sol = locate(refined, setup.W, cfg)
            coarse_err = _path_errors(coarse, eta)
        else:
            res = ulris_estimate(Y, setup.profile, cfg, n_paths=S)
            coarse, refined, sol = res.coarse, res.refined.params, res.solution
            coarse_err = _path_errors(coarse, eta)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.info("trial %d at point %d failed: %s", trial, index, exc)
        return None
    return {
        "coarse": coarse_err,
        "refined": _path_errors(refined, eta),
        "pos": float(np.linalg.norm(sol.p0 - cfg.p_ue)),
        "delta": sol.delta - cfg.clock_offset,
    }


def _run_chunk(args):
    setup, spec, index, trials = args
    with threadpool_limits(limits=1):
        return [run_trial(setup, spec, index, t) for t in trials]


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _collect(setup, spec, index, workers):
    trials = list(range(spec.n_trials))
    if workers <= 1:
        return _run_chunk((setup, spec, index, trials))
    chunks = [trials[i::workers] for i in range(workers)]
    out = [None] * spec.n_trials
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for chunk, res in zip(chunks, pool.map(_run_chunk, [(setup, spec, index, c) for c in chunks])):
            for t, r in zip(chunk, res):
                out[t] = r
    return out


def aggregate(results, setup: PointSetup, spec: ExperimentSpec, index: int) -> dict:
    ok = [r for r in results if r is not None]
    row = {"axis": spec.axis, "value": spec.values[index], "estimator": spec.estimator,
           "profile": spec.profile, "snr_db": setup.snr_db, "n_trials": len(results),
           "n_failed": len(results) - len(ok)}
    nan = float("nan")
    for k, p in enumerate(PARAMS):
        row[f"rmse_coarse_{p}"] = rmse([r["coarse"][k] for r in ok]) if ok else nan
        row[f"rmse_{p}"] = rmse([r["refined"][k] for r in ok]) if ok else nan
    row["rmse_pos"] = rmse([r["pos"] for r in ok]) if ok else nan
    row["rmse_delta"] = rmse([r["delta"] for r in ok]) if ok else nan
    try:
        rep = bounds(setup.eta, setup.W, setup.cfg)
        crb = rep.crb_channel
        for p in PARAMS:
            i = _ETA_INDEX[p]
            row[f"crb_{p}"] = float(np.sqrt(crb[i, i])) if crb is not None else nan
        row["peb"], row["ceb"] = rep.peb, rep.ceb
    except UnidentifiableError:
        for p in PARAMS:
            row[f"crb_{p}"] = nan
        row["peb"] = row["ceb"] = nan
    return row


def run_experiment(spec: ExperimentSpec, workers: int | None = None) -> list[ResultRow]:
    """Every sweep point: fixed truth and profile, ``n_trials`` noise draws, RMSE versus bounds."""
    workers = worker_count() if workers is None else workers
    rows = []
    for index in range(len(spec.values)):
        start = time.perf_counter()
        with threadpool_limits(limits=1):
            setup = setup_point(spec, index)
        results = _collect(setup, spec, index, workers)
        with threadpool_limits(limits=1):
            values = aggregate(results, setup, spec, index)
        rows.append(ResultRow(values, time.perf_counter() - start))
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


def emit_csv(rows, path, include_timing: bool = False) -> None:
    """Header plus one line per sweep point with full float precision.

    Wall time is left out by default so reruns give byte-identical files.
    """
    cols = list(COLUMNS) + (["wall_time"] if include_timing else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            vals = dict(row.values)
            if include_timing:
                vals["wall_time"] = row.wall_time
            w.writerow([_fmt(vals[c]) for c in cols])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

"""Acceptance criteria, one test each.

Every test records PASS/FAIL through ``record_criterion`` before asserting, so
the summary at the end of the run lists all nine outcomes. The slow ones
(Monte Carlo sweeps) are marked ``slow``. Run directly with
``python3 tests/test_acceptance.py``.
"""
import time

import numpy as np
import pytest

from conftest import farfield_signal, random_profile
from risloc.coarse import coarse_estimate, cpd_omp, default_distance_grid
from risloc.crb import bounds, channel_from_position, jacobian_position, reduced_fim, signal_derivatives, \
    true_position_vector
from risloc.geometry import ChannelParams, ScenarioConfig, noiseless_signal, true_channel
from risloc.harness import ExperimentSpec, emit_csv, run_experiment, worker_count
from risloc.phase_opt import fim_from_covariance, k_matrix, optimize_profile
from risloc.positioning import locate
from risloc.refine import sage_refine
from risloc.tensor import build_kronecker_profile
from risloc.ulris import make_plan
from test_ulris import leakage


def _random_scenario(rng):
    n_x, n_z = rng.integers(2, 7, 2)
    S = int(rng.integers(1, 3))
    p_ue = [rng.uniform(-2, 2), rng.uniform(0.5, 4), rng.uniform(-2, 2)]
    scat = np.column_stack([rng.uniform(-2, 2, S - 1), rng.uniform(0.5, 4, S - 1), rng.uniform(-2, 2, S - 1)])
    return ScenarioConfig(n_x=int(n_x), n_z=int(n_z), n_subcarriers=int(rng.integers(2, 9)),
                          n_symbols=int(rng.integers(2, 7)), p_ue=p_ue, scatterers=scat,
                          clock_offset=rng.uniform(0, 2e-7))


def _central(f, x, k, h):
    xp, xm = x.copy(), x.copy()
    xp[k] += h
    xm[k] -= h
    return (f(xp) - f(xm)) / (2 * h)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_c1_derivatives_match_finite_differences(record_criterion):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = {"signal": 0.0, "jacobian": 0.0, "k": 0.0}
    for _ in range(100):
        cfg = _random_scenario(rng)
        eta = true_channel(cfg, rng)
        W = random_profile(cfg.layout.n_elements, cfg.n_symbols, rng)
        _, dmu = signal_derivatives(eta, W, cfg)
        v = eta.to_vector()

        def mu(x):
            return signal_derivatives(ChannelParams.from_vector(x), W, cfg)[0]

        for k in range(v.size):
            h = 1e-4 / cfg.bandwidth if k % 6 == 5 else 1e-6 * max(abs(v[k]), 1e-3)
            fd = _central(mu, v, k, h)
            worst["signal"] = max(worst["signal"], _rel(dmu[k], fd))
        for s, p in enumerate(eta):
            for n in range(cfg.n_subcarriers):
                got = W.T @ k_matrix(p, n, cfg)
                worst["k"] = max(worst["k"], _rel(got, dmu[6 * s:6 * s + 6, n, :].T))
        x = true_position_vector(cfg, eta)
        J = jacobian_position(x, cfg)
        for i in range(x.size):
            h = 1e-15 if i == 3 * len(eta) else 1e-6
            fd = _central(lambda y: channel_from_position(y, cfg), x, i, h)
            worst["jacobian"] = max(worst["jacobian"], _rel(J[i], fd))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-6 and elapsed < 60
    record_criterion(1, ok, f"worst relative error {max(worst.values()):.2e} "
                            f"({', '.join(f'{k} {v:.1e}' for k, v in worst.items())}), {elapsed:.1f} s")
    assert ok


def test_c2_bounds_scale_with_noise(record_criterion):
    cfg = ScenarioConfig(n_x=24, n_z=24)
    eta = true_channel(cfg)
    W = build_kronecker_profile(24, 24, 16, 16, np.random.default_rng(2)).matrix
    base = bounds(eta, W, cfg)
    worst = 0.0
    for c in (1e-3, 0.5, 2.0, 10.0, 1e4):
        rep = bounds(eta, W, cfg.replace(noise_variance=c * cfg.noise_variance))
        worst = max(worst, abs(rep.peb / (np.sqrt(c) * base.peb) - 1), abs(rep.ceb / (np.sqrt(c) * base.ceb) - 1))
    ok = worst <= 1e-10
    record_criterion(2, ok, f"worst relative deviation from sqrt scaling {worst:.1e}")
    assert ok


def test_c3_covariance_fim_matches_direct(record_criterion):
    cfg = ScenarioConfig(n_x=12, n_z=12, n_symbols=32)
    eta = true_channel(cfg)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        W = random_profile(144, 32, rng)
        direct = reduced_fim(eta, W, cfg)
        worst = max(worst, _rel(fim_from_covariance(eta, W @ W.conj().T, cfg), direct))
    ok = worst <= 1e-8
    record_criterion(3, ok, f"worst relative difference {worst:.1e}")
    assert ok


def test_c4_noiseless_recovery(record_criterion):
    # far field, single path: the tensor stage alone is exact
    cfg_ff = ScenarioConfig(n_x=16, n_z=16, scatterers=np.zeros((0, 3)))
    eta_ff = true_channel(cfg_ff)
    prof = build_kronecker_profile(16, 16, 16, 16, np.random.default_rng(4))
    p = cpd_omp(farfield_signal(cfg_ff, eta_ff, prof.matrix), prof, cfg_ff, n_paths=1).paths[0]
    q = eta_ff[0]
    err_ff = max(abs(p.phi_el - q.phi_el), abs(p.phi_az - q.phi_az), abs(p.tau / q.tau - 1))
    # near field with the true distances on the grid: coarse, SAGE, then positioning
    cfg = ScenarioConfig(n_x=24, n_z=24)
    eta = true_channel(cfg)
    prof = build_kronecker_profile(24, 24, 16, 16, np.random.default_rng(5))
    Y = noiseless_signal(cfg, eta, prof.matrix)
    grid = np.union1d(default_distance_grid(cfg.layout, cfg.wavelength), [p.d for p in eta])
    coarse = coarse_estimate(Y, prof, cfg, n_paths=2, grid=grid).params
    refined = sage_refine(Y, coarse, prof, cfg).params
    v, w = refined.to_vector().reshape(-1, 6), eta.to_vector().reshape(-1, 6)
    scale = np.array([[abs(p.rho)] * 2 + [p.phi_el, p.phi_az, p.d, p.tau] for p in eta])
    err_nf = float(np.max(np.abs(v - w) / scale))
    sol = locate(refined, prof.matrix, cfg)
    err_p = float(np.linalg.norm(sol.p0 - cfg.p_ue))
    err_d = abs(sol.delta - cfg.clock_offset)
    ok = err_ff <= 1e-5 and err_nf <= 1e-4 and err_p <= 1e-3 and err_d <= 1e-12
    record_criterion(4, ok, f"far-field tensor error {err_ff:.1e}; near-field relative error {err_nf:.1e}; "
                            f"position {err_p:.1e} m; clock {err_d:.1e} s")
    assert ok


@pytest.mark.slow
def test_c5_desk_sweep_tracks_bounds(record_criterion, tmp_path):
    cfg = ScenarioConfig(n_x=24, n_z=24)
    spec = ExperimentSpec(cfg, "snr", [-10.0, -5.0, 0.0, 5.0, 10.0], "p1", "random", 100, seed=0)
    t0 = time.perf_counter()
    rows = run_experiment(spec, workers=worker_count())
    elapsed = time.perf_counter() - t0
    emit_csv(rows, tmp_path / "c5.csv")
    lines, refined_ok = [], True
    for row in rows:
        r = row.values
        ratios = {p: r[f"rmse_{p}"] / r[f"crb_{p}"] for p in ("el", "az", "tau", "d")}
        refined_ok &= all(x <= 2.0 for x in ratios.values())
        lines.append(f"{r['snr_db']:+.0f} dB: " + " ".join(f"{p} {x:.2f}" for p, x in ratios.items())
                     + f" pos/PEB {r['rmse_pos'] / r['peb']:.2f} failed {r['n_failed']}")
    top = rows[-1].values
    floor = {p: top[f"rmse_coarse_{p}"] / top[f"crb_{p}"] for p in ("el", "az")}
    floor_ok = all(x > 3.0 for x in floor.values())
    ok = refined_ok and floor_ok and elapsed <= 1200
    record_criterion(5, ok, f"refined within 2x CRB: {refined_ok}; coarse/CRB at +10 dB el {floor['el']:.2f} "
                            f"az {floor['az']:.2f}; {elapsed:.0f} s; RMSE/CRB by SNR: " + "; ".join(lines))
    assert ok


@pytest.mark.slow
def test_c6_ulris_beats_single_surface(record_criterion):
    cfg = ScenarioConfig(n_x=64, n_z=64)
    res = {}
    for est in ("p1", "p2"):
        spec = ExperimentSpec(cfg, "snr", [10.0], est, "random", 50, seed=0)
        res[est] = run_experiment(spec, workers=worker_count())[0].values
    ratio = res["p2"]["rmse_pos"] / res["p1"]["rmse_pos"]
    eff = res["p2"]["rmse_pos"] / res["p2"]["peb"]
    ok = ratio <= 0.5 and eff < 3
    record_criterion(6, ok, f"p2/p1 position RMSE {ratio:.3f} ({res['p2']['rmse_pos']:.4f} / "
                            f"{res['p1']['rmse_pos']:.4f} m); p2 RMSE/PEB {eff:.2f}; "
                            f"failed p1 {res['p1']['n_failed']} p2 {res['p2']['n_failed']}")
    assert ok


@pytest.mark.slow
def test_c7_designed_profile_beats_random(record_criterion):
    cfg = ScenarioConfig(n_x=24, n_z=24)
    eta = true_channel(cfg)
    rng = np.random.default_rng(7)
    rand = [bounds(eta, random_profile(576, cfg.n_symbols, rng), cfg).peb for _ in range(50)]
    med = float(np.median(rand))
    W1, peb1 = optimize_profile(eta, cfg, "opt1", rng=np.random.default_rng(8))
    W2, peb2 = optimize_profile(eta, cfg, "opt2", rng=np.random.default_rng(8))
    unit = max(np.abs(np.abs(W) - 1).max() for W in (W1, W2))
    ok = peb2 <= 0.5 * med and peb2 <= peb1 and unit < 1e-12
    record_criterion(7, ok, f"PEB random median {med:.4f} m, opt1 {peb1:.4f} m, opt2 {peb2:.4f} m "
                            f"(opt2/median {peb2 / med:.3f}); modulus error {unit:.1e}")
    assert ok


def test_c8_separation_leakage(record_criterion):
    cfg = ScenarioConfig()
    plan = make_plan(cfg.layout, 2, 2, 8, 8, np.random.default_rng(9))
    leak = leakage(cfg, true_channel(cfg), plan)
    ok = leak < 1e-12
    record_criterion(8, ok, f"worst relative leakage energy {leak:.1e}")
    assert ok


@pytest.mark.slow
def test_c9_parallel_runs_are_identical(record_criterion, tmp_path):
    cfg = ScenarioConfig(n_x=24, n_z=24)
    spec = ExperimentSpec(cfg, "snr", [0.0, 10.0], "p1", "random", 4, seed=11)
    emit_csv(run_experiment(spec, workers=1), tmp_path / "w1.csv")
    emit_csv(run_experiment(spec, workers=2), tmp_path / "w2.csv")
    a, b = (tmp_path / "w1.csv").read_bytes(), (tmp_path / "w2.csv").read_bytes()
    ok = a == b
    record_criterion(9, ok, f"CSV identical at 1 and 2 workers: {ok} ({len(a)} bytes)")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", "-s"]))

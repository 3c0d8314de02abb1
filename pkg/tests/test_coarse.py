import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import farfield_signal, small_config
from risloc.coarse import (build_distance_dictionary, coarse_estimate, cpd_omp, default_distance_grid,
                           estimate_gains, fit_frequency, fit_mode_frequency, forward_frequencies,
                           frequencies_to_geometry, geometry_to_frequencies, lasso_distances, mode_vector)
from risloc.exceptions import InfeasibleFrequencyError, OverRegularizedError
from risloc.geometry import (ChannelParams, ScenarioConfig, complex_noise, noise_for_snr, noiseless_signal,
                             spherical_from_position, true_channel, vandermonde)
from risloc.tensor import build_kronecker_profile


def test_fit_plain_vandermonde():
    _, w = fit_frequency(vandermonde(0.3, 40))
    assert w == pytest.approx(0.3, abs=1e-6)


def test_fit_through_profile(rng):
    prof = build_kronecker_profile(12, 12, 6, 6, rng)
    u = 1.7j * mode_vector(-1.234, 2, prof)
    alpha, w = fit_mode_frequency(u, 2, prof)
    assert w == pytest.approx(-1.234, abs=1e-6)
    assert alpha == pytest.approx(1.7j, abs=1e-5)


def test_default_frequencies():
    cfg = ScenarioConfig()
    eta = true_channel(cfg)
    w1, w2, w3 = forward_frequencies(eta[0], cfg)
    # independent evaluation: half-wavelength spacing gives pi times the direction cosines
    assert w1 == pytest.approx(-2 * np.pi * eta[0].tau * 120e3, rel=1e-14)
    assert w1 == pytest.approx(-0.2437632, abs=1e-7)
    assert w2 == pytest.approx(np.pi * 3 / np.sqrt(46), abs=1e-12)
    assert w2 == pytest.approx(1.389608, abs=1e-6)
    assert w3 == pytest.approx(np.pi * (5 / cfg.d_bs - 1 / np.sqrt(46)), abs=1e-12)
    assert w3 == pytest.approx(-0.202307, abs=1e-6)
    th_el, th_az, _ = spherical_from_position(cfg.p_bs, cfg.p_ris)
    tau, el, az = frequencies_to_geometry(w1, w2, w3, th_el, th_az, cfg.wavelength, cfg.element_spacing,
                                          cfg.subcarrier_spacing)
    assert tau == pytest.approx(eta[0].tau, rel=1e-14)
    assert el == pytest.approx(eta[0].phi_el, abs=1e-12)
    assert az == pytest.approx(eta[0].phi_az, abs=1e-12)
    assert frequencies_to_geometry(0.0, w2, w3, th_el, th_az, cfg.wavelength, cfg.element_spacing, 1.0)[0] == 0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, np.pi - 0.05), st.floats(0.05, np.pi - 0.05), st.floats(1e-8, 5e-7))
def test_frequency_round_trip(el, az, tau):
    lam, dx, df = 0.0107, 0.0107 / 2, 120e3
    th_el, th_az = 1.49, -np.pi / 2
    w = geometry_to_frequencies(tau, el, az, th_el, th_az, lam, dx, df)
    wrapped = [float(np.angle(np.exp(1j * v))) for v in w[1:]]
    tau2, el2, az2 = frequencies_to_geometry(w[0], *wrapped, th_el, th_az, lam, dx, df)
    assert abs(el2 - el) < 1e-9 and abs(az2 - az) < 1e-9
    assert tau2 == pytest.approx(tau, rel=1e-12)


def test_infeasible_frequency():
    # a wide spacing makes some aliases leave the visible region
    with pytest.raises(InfeasibleFrequencyError):
        frequencies_to_geometry(0.0, 0.0, 3.0, np.pi / 2, 0.0, 1.0, 0.25, 1.0)


def test_cpd_omp_farfield_exact(rng):
    cfg = small_config(n_x=16, n_z=16, scatterers=np.zeros((0, 3)))
    eta = true_channel(cfg)
    prof = build_kronecker_profile(16, 16, 4, 4, rng)
    Y = farfield_signal(cfg, eta, prof.matrix)
    res = cpd_omp(Y, prof, cfg, n_paths=1)
    p = res.paths[0]
    assert abs(p.tau - eta[0].tau) < 1e-5 * eta[0].tau
    assert abs(p.phi_el - eta[0].phi_el) < 1e-5
    assert abs(p.phi_az - eta[0].phi_az) < 1e-5


def test_cpd_omp_residual_decreases(rng):
    cfg = small_config(n_x=16, n_z=16)
    eta = true_channel(cfg)
    prof = build_kronecker_profile(16, 16, 4, 4, rng)
    Y = noiseless_signal(cfg, eta, prof.matrix)
    Y = Y + complex_noise(Y.shape, noise_for_snr(Y, 0.0), rng)
    res = cpd_omp(Y, prof, cfg, n_paths=3)
    assert all(np.diff(res.residual_energy) < 0)
    assert all(np.isfinite([p.phi_el for p in res.paths]))


def test_distance_dictionary_single_column(rng):
    cfg = small_config(n_x=16, n_z=16, scatterers=np.zeros((0, 3)))
    eta = true_channel(cfg)
    W = build_kronecker_profile(16, 16, 4, 4, rng).matrix
    w1 = -2 * np.pi * eta[0].tau * cfg.subcarrier_spacing
    dic = build_distance_dictionary(w1, eta[0].phi_el, eta[0].phi_az, [eta[0].d], W, cfg)
    D = dic.matrix()
    y = noiseless_signal(cfg, eta, W).ravel(order="F")
    coef = np.vdot(D[:, 0], y) / np.vdot(D[:, 0], D[:, 0])
    np.testing.assert_allclose(y, coef * D[:, 0], atol=1e-12 * np.linalg.norm(y))
    # unit-modulus delay factor: column norm is sqrt(N) ||q||
    assert np.linalg.norm(D[:, 0]) == pytest.approx(np.sqrt(cfg.n_subcarriers) * np.linalg.norm(dic.q[0]), rel=1e-12)


def _coherence(cfg, W, d1, d2):
    D = build_distance_dictionary(0.0, 1.72, 1.1, [d1, d2], W, cfg).matrix()
    return abs(np.vdot(D[:, 0], D[:, 1])) / (np.linalg.norm(D[:, 0]) * np.linalg.norm(D[:, 1]))


def test_distance_coherence_falls_with_range():
    # measured: 0.94 for 3 m vs 6.8 m, 0.86 for 3 m vs 30 m, 0.50 for 1.5 m vs 30 m on the 48 x 48 surface;
    # range separation helps but columns stay far from orthogonal
    cfg = ScenarioConfig()
    W = np.exp(1j * np.random.default_rng(0).uniform(0, 2 * np.pi, (cfg.layout.n_elements, 64)))
    near = _coherence(cfg, W, 3.0, 6.78)
    far = _coherence(cfg, W, 3.0, 30.0)
    closest = _coherence(cfg, W, 1.5, 30.0)
    assert closest < far < near < 1.0
    assert closest < 0.6


def test_lasso_on_grid_support(rng):
    # targets inside the near field of a 16 x 16 surface; grid step well above the range resolution
    cfg = small_config(n_x=16, n_z=16, p_ue=[0.6, 1.2, -0.2], scatterers=[[-0.4, 0.8, 0.4]])
    eta = true_channel(cfg)
    prof = build_kronecker_profile(16, 16, 4, 4, rng)
    W = prof.matrix
    grid = np.union1d(np.linspace(0.3, 3.0, 10), [eta[0].d, eta[1].d])
    Y = noiseless_signal(cfg, eta, W)
    dicts = [build_distance_dictionary(-2 * np.pi * p.tau * cfg.subcarrier_spacing, p.phi_el, p.phi_az, grid, W, cfg)
             for p in eta]
    corr = np.concatenate([d.adjoint(Y) for d in dicts])
    fit = lasso_distances(Y, dicts, xi=1e-3 * np.abs(corr).max(), tol=1e-10, max_iter=20000)
    np.testing.assert_allclose(fit.distances, [eta[0].d, eta[1].d], atol=1e-12)
    assert all(np.diff(fit.objective) <= 0)
    with pytest.raises(OverRegularizedError):
        lasso_distances(Y, dicts, xi=2 * np.abs(corr).max())


def test_gains_exact_and_noise_scaling(rng):
    cfg = small_config(n_x=16, n_z=16)
    eta = true_channel(cfg)
    W = build_kronecker_profile(16, 16, 4, 4, rng).matrix
    w1 = [-2 * np.pi * p.tau * cfg.subcarrier_spacing for p in eta]
    pos = eta.positions(cfg.p_ris)
    Y = noiseless_signal(cfg, eta, W)
    np.testing.assert_allclose(estimate_gains(Y, w1, pos, W, cfg), eta.rhos, rtol=1e-8)
    # error grows linearly with the noise amplitude
    Z = complex_noise(Y.shape, 1.0, rng)
    sig = np.array([1e-1, 1e-2, 1e-3, 1e-4]) * np.sqrt(np.mean(np.abs(Y) ** 2))
    err = [np.linalg.norm(estimate_gains(Y + s * Z, w1, pos, W, cfg) - eta.rhos) for s in sig]
    slope = np.polyfit(np.log10(sig), np.log10(err), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.02)


def test_coarse_estimate_default_geometry(rng):
    cfg = ScenarioConfig(n_x=24, n_z=24)
    eta = true_channel(cfg)
    prof = build_kronecker_profile(24, 24, 16, 16, rng)
    Y = noiseless_signal(cfg, eta, prof.matrix)
    Y = Y + complex_noise(Y.shape, noise_for_snr(Y, 0.0), rng)
    est = coarse_estimate(Y, prof, cfg, n_paths=2).params
    assert isinstance(est, ChannelParams) and len(est) == 2
    assert abs(est[0].phi_el - eta[0].phi_el) < 0.05 and abs(est[0].phi_az - eta[0].phi_az) < 0.05
    assert abs(est[0].tau - eta[0].tau) < 1 / cfg.bandwidth
    grid = default_distance_grid(cfg.layout, cfg.wavelength)
    assert grid[0] >= 0.5 and grid[-1] == 15.0

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_config
from risloc.geometry import delay_vector, farfield_steering, true_channel
from risloc.tensor import (KroneckerProfile, build_kronecker_profile, outer3, profile_apply, rank1_cpd, tensorize,
                           untensorize)


def test_kronecker_entry_layout(rng):
    prof = build_kronecker_profile(3, 4, 2, 5, rng)
    W = prof.matrix
    for ix in range(3):
        for iz in range(4):
            for a in range(2):
                for b in range(5):
                    assert abs(W[ix * 4 + iz, a * 5 + b] - prof.t1[ix, a] * prof.t2[iz, b]) < 1e-15


def test_kronecker_shapes(rng):
    one = build_kronecker_profile(1, 1, 1, 1, rng).matrix
    assert one.shape == (1, 1) and abs(abs(one[0, 0]) - 1) < 1e-15
    prof = build_kronecker_profile(48, 48, 16, 16, rng)
    assert prof.shape == (2304, 256) and prof.matrix.shape == (2304, 256)
    np.testing.assert_allclose(np.abs(prof.matrix), 1.0, atol=1e-14)
    with pytest.raises(ValueError):
        build_kronecker_profile(4, 4, 0, 2, rng)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_structured_apply_matches_matmul(nx, nz, t1, t2, seed):
    rng = np.random.default_rng(seed)
    prof = build_kronecker_profile(nx, nz, t1, t2, rng)
    b = rng.standard_normal((3, nx * nz)) + 1j * rng.standard_normal((3, nx * nz))
    np.testing.assert_allclose(prof.apply(b), b @ prof.matrix, atol=1e-12)
    np.testing.assert_allclose(profile_apply(prof, b[0]), profile_apply(prof.matrix, b[0]), atol=1e-12)


def test_farfield_single_path_tensor_is_rank_one(rng):
    cfg = small_config()
    prof = build_kronecker_profile(8, 8, 4, 4, rng)
    b = farfield_steering(1.7, 1.1, cfg.layout, cfg.wavelength) * farfield_steering(1.49, -np.pi / 2, cfg.layout,
                                                                                   cfg.wavelength)
    Y = np.outer(delay_vector(3e-7, cfg), b @ prof.matrix)
    X = tensorize(Y, 4, 4)
    res = rank1_cpd(X)
    assert res.residual < 1e-10 * np.linalg.norm(X)
    np.testing.assert_array_equal(untensorize(X), Y)


def test_tensor_rank_bounded_by_paths(rng):
    cfg = small_config()
    prof = build_kronecker_profile(8, 8, 4, 4, rng)
    eta = true_channel(cfg)
    Y = sum(p.rho * np.outer(delay_vector(p.tau, cfg), farfield_steering(p.phi_el, p.phi_az, cfg.layout,
                                                                         cfg.wavelength) @ prof.matrix)
            for p in eta)
    # mode-1 unfolding rank equals the number of paths
    s = np.linalg.svd(tensorize(Y, 4, 4).reshape(16, -1), compute_uv=False)
    assert s[2] < 1e-10 * s[0]


def test_tensorize_rejects_bad_shape():
    with pytest.raises(ValueError):
        tensorize(np.zeros((3, 10)), 4, 3)


def _angle(u, v):
    c = abs(np.vdot(u, v)) / (np.linalg.norm(u) * np.linalg.norm(v))
    return np.arccos(min(1.0, c))


def test_rank1_exact_and_noisy(rng):
    a = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    b = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    c = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    X = outer3(a, b, c)
    res = rank1_cpd(X)
    assert res.residual < 1e-10 * np.linalg.norm(X)
    for u, v in zip(res.factors, (a, b, c)):
        assert _angle(u, v) < 1e-7
    noise = rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape)
    Xn = X + 1e-3 * np.linalg.norm(X) * noise / np.linalg.norm(noise)
    res = rank1_cpd(Xn)
    for u, v in zip(res.factors, (a, b, c)):
        assert _angle(u, v) < 1e-2
    assert all(np.diff(res.history) <= 1e-12 * np.linalg.norm(X))


def test_rank1_zero_tensor():
    with pytest.raises(ValueError):
        rank1_cpd(np.zeros((2, 2, 2)))


def test_kronecker_profile_is_frozen(rng):
    prof = KroneckerProfile(np.ones((2, 1)), np.ones((2, 1)))
    np.testing.assert_array_equal(prof.matrix, np.ones((4, 1)))

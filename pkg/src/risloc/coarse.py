"""Coarse channel estimation: CPD-OMP for delays and departure angles under the
far-field approximation, an l1-regularised dictionary fit for distances, and a
least-squares fit of the complex gains."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import IllConditionedError, InfeasibleFrequencyError, OverRegularizedError
from .geometry import (ChannelParams, PathParams, RisLayout, ScenarioConfig, combined_steering,
                       delay_vector, fresnel_bounds, position_from_spherical, spherical_from_position,
                       vandermonde)
from .optim import golden_section_max, lasso_gram
from .tensor import KroneckerProfile, outer3, rank1_cpd, tensorize

log = logging.getLogger(__name__)

N_GRID = 4096


# ---------------------------------------------------------------------------
# 1-D frequency fits
# ---------------------------------------------------------------------------


def _mode_basis(mode: int, profile: KroneckerProfile | None):
    if mode == 1:
        return None
    if profile is None:
        raise ValueError("modes 2 and 3 need the Kronecker profile")
    return profile.t1 if mode == 2 else profile.t2


def mode_vector(omega: float, mode: int, profile: KroneckerProfile | None = None, n: int | None = None):
    """``r_1 = c^(N)(omega)``, ``r_2 = T1^T c^(N_x)(omega)``, ``r_3 = T2^T c^(N_z)(omega)``."""
    basis = _mode_basis(mode, profile)
    if basis is None:
        return vandermonde(omega, n)
    return basis.T @ vandermonde(omega, basis.shape[0])


def fit_frequency(u, basis=None, n_grid: int = N_GRID, tol: float = 1e-8) -> tuple[complex, float]:
    """Fit ``u ~ alpha * r(omega)`` with ``r(omega) = basis^T c(omega)``.

    ``basis=None`` means ``r(omega) = c(omega)`` of the same length as ``u``.
    A uniform grid on (-pi, pi] locates the peak of ``|r^H u|^2 / ||r||^2``
    and golden-section search refines it inside one grid cell either side.
    """
    u = np.asarray(u, dtype=complex)
    m = u.size if basis is None else basis.shape[0]

    def r_of(w):
        c = vandermonde(w, m)
        return c if basis is None else basis.T @ c

    grid = -np.pi + 2 * np.pi * np.arange(1, n_grid + 1) / n_grid
    C = vandermonde(grid, m).T  # (m, G)
    R = C if basis is None else basis.T @ C
    score = np.abs(R.conj().T @ u) ** 2 / np.sum(np.abs(R) ** 2, axis=0)
    k = int(np.argmax(score))
    h = 2 * np.pi / n_grid

    def g(w):
        r = r_of(w)
        return np.abs(np.vdot(r, u)) ** 2 / np.vdot(r, r).real

    w_hat, _ = golden_section_max(g, grid[k] - h, grid[k] + h, tol=tol)
    w_hat = float(np.angle(np.exp(1j * w_hat)))
    if w_hat == -np.pi:
        w_hat = np.pi
    r = r_of(w_hat)
    alpha = np.vdot(r, u) / np.vdot(r, r).real
    return complex(alpha), w_hat


def fit_mode_frequency(u, mode: int, profile: KroneckerProfile | None = None, n_grid: int = N_GRID):
    """Solve the 1-D search of one CPD factor; returns ``(alpha, omega)``."""
    return fit_frequency(u, _mode_basis(mode, profile), n_grid)


def _unwrap_cosine(value, period):
    # pick the alias of a direction cosine that lies in [-1, 1]
    k = np.round(-value / period)
    v = value + k * period
    if abs(v) > 1.0 + 1e-9:
        raise InfeasibleFrequencyError(f"direction cosine {v:.6f} outside [-1, 1]")
    return float(np.clip(v, -1.0, 1.0))


def geometry_to_frequencies(tau, phi_el, phi_az, theta_el, theta_az, wavelength, spacing, delta_f):
    """Forward map to ``(omega1, omega2, omega3)``, not wrapped."""
    u = 2 * np.pi * spacing / wavelength
    w1 = -2 * np.pi * tau * delta_f
    w2 = u * (np.sin(theta_el) * np.cos(theta_az) + np.sin(phi_el) * np.cos(phi_az))
    w3 = u * (np.cos(theta_el) + np.cos(phi_el))
    return w1, w2, w3


def frequencies_to_geometry(omega1, omega2, omega3, theta_el, theta_az, wavelength, spacing, delta_f,
                            side: float = 1.0):
    """Invert the delay and spatial frequencies to ``(tau, phi_el, phi_az)``.

    ``side`` selects the half-space ``sign(y) = side`` in front of the RIS,
    which the planar aperture cannot tell from its mirror image.

    Raises
    ------
    InfeasibleFrequencyError
        When no alias of a spatial frequency gives a valid direction cosine.
    """
    u = 2 * np.pi * spacing / wavelength
    period = 2 * np.pi / u
    tau = -omega1 / (2 * np.pi * delta_f)
    cos_el = _unwrap_cosine(omega3 / u - np.cos(theta_el), period)
    phi_el = float(np.arccos(cos_el))
    ux = _unwrap_cosine(omega2 / u - np.sin(theta_el) * np.cos(theta_az), period)
    sin_el = np.sin(phi_el)
    if sin_el == 0.0:
        if abs(ux) > 1e-9:
            raise InfeasibleFrequencyError("zenith direction with non-zero x cosine")
        return float(tau), phi_el, 0.0
    cos_az = ux / sin_el
    if abs(cos_az) > 1.0 + 1e-9:
        raise InfeasibleFrequencyError(f"cos(phi_az) = {cos_az:.6f} outside [-1, 1]")
    phi_az = side * float(np.arccos(np.clip(cos_az, -1.0, 1.0)))
    return float(tau), phi_el, phi_az


# ---------------------------------------------------------------------------
# CPD-OMP
# ---------------------------------------------------------------------------


@dataclass
class CoarsePath:
    tau: float
    phi_el: float
    phi_az: float
    omegas: tuple
    amplitude: complex


@dataclass
class CpdOmpResult:
    paths: list[CoarsePath]
    residual_energy: list = field(default_factory=list)
    discarded: int = 0


def cpd_omp(Y, profile: KroneckerProfile, cfg: ScenarioConfig, n_paths: int | None = None,
            delta: float | None = None, layout: RisLayout | None = None, n_grid: int = N_GRID,
            sigma2: float | None = None) -> CpdOmpResult:
    """Greedy path-by-path extraction of delays and departure angles.

    Each iteration tensorises the residual, takes a rank-1 CPD, fits one
    frequency per mode, maps the frequencies to ``(tau, phi_el, phi_az)`` and
    removes the projection of the fitted atom from the residual.

    Parameters
    ----------
    Y : ndarray, shape (N, T)
    profile : KroneckerProfile
        The ``T1 kron T2`` profile used to acquire ``Y``.
    cfg : ScenarioConfig
    n_paths : int, optional
        Number of paths to extract. When omitted, iterate until the energy
        removed by a deflation step drops below ``delta``.
    delta : float, optional
        Stopping threshold; defaults to ``1.5 N T sigma2``.
    layout : RisLayout, optional
        Aperture the angles refer to (defaults to the full RIS).
    """
    Y = np.asarray(Y, dtype=complex)
    layout = cfg.layout if layout is None else layout
    n_sub = Y.shape[0]
    if n_paths is None:
        sigma2 = cfg.noise_variance if sigma2 is None else sigma2
        delta = 1.5 * Y.size * sigma2 if delta is None else delta
        max_iter = min(Y.size, 16)
    else:
        max_iter = n_paths + 2
    theta_el, theta_az, _ = spherical_from_position(cfg.p_bs, layout.center)
    resid = tensorize(Y, profile.n_t1, profile.n_t2).copy()
    energy = [float(np.vdot(resid, resid).real)]
    result = CpdOmpResult([], energy)
    if energy[0] == 0.0:
        return result
    for _ in range(max_iter):
        if n_paths is not None and len(result.paths) >= n_paths:
            break
        cpd = rank1_cpd(resid)
        _, w1 = fit_frequency(cpd.u1, None, n_grid)
        _, w2 = fit_frequency(cpd.u2, profile.t1, n_grid)
        _, w3 = fit_frequency(cpd.u3, profile.t2, n_grid)
        atom = outer3(mode_vector(w1, 1, n=n_sub), mode_vector(w2, 2, profile), mode_vector(w3, 3, profile))
        amp = np.vdot(atom, resid) / np.vdot(atom, atom).real
        removed = amp * atom
        resid = resid - removed
        energy.append(float(np.vdot(resid, resid).real))
        try:
            tau, el, az = frequencies_to_geometry(w1, w2, w3, theta_el, theta_az, cfg.wavelength,
                                                  layout.spacing, cfg.subcarrier_spacing, cfg.ue_side)
        except InfeasibleFrequencyError as exc:
            log.debug("discarding component: %s", exc)
            result.discarded += 1
        else:
            result.paths.append(CoarsePath(tau, el, az, (w1, w2, w3), complex(amp)))
        if n_paths is None and np.vdot(removed, removed).real < delta:
            if result.paths and result.discarded == 0:
                result.paths.pop()
            break
    return result


# ---------------------------------------------------------------------------
# Distance dictionary and LASSO
# ---------------------------------------------------------------------------


def default_distance_grid(layout: RisLayout, wavelength: float, n_points: int = 200,
                          d_min: float = 0.5, d_max: float = 15.0) -> np.ndarray:
    lo, _ = fresnel_bounds(layout, wavelength)
    return np.linspace(max(d_min, lo), d_max, n_points)


@dataclass(eq=False)
class DistanceDictionary:
    """Factored dictionary with columns ``vec(r1 q_m^T)``.

    ``q[m] = b(p(d_m, phi_el, phi_az))^T W``. :meth:`matrix` materialises the
    ``NT x M`` matrix using column-major ``vec``.
    """

    r1: np.ndarray
    q: np.ndarray
    distances: np.ndarray

    def matrix(self) -> np.ndarray:
        return np.stack([np.kron(qm, self.r1) for qm in self.q], axis=1)

    def adjoint(self, Y) -> np.ndarray:
        """``D^H vec(Y)``."""
        return self.q.conj() @ (np.asarray(Y).T @ self.r1.conj())


def build_distance_dictionary(omega1: float, phi_el: float, phi_az: float, grid, W,
                              cfg: ScenarioConfig, layout: RisLayout | None = None) -> DistanceDictionary:
    layout = cfg.layout if layout is None else layout
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("distance grid is empty")
    pts = position_from_spherical(grid[:, None], phi_el, phi_az, layout.center)
    B = combined_steering(pts, cfg.p_bs, layout, cfg.wavelength)  # (M, N_R)
    return DistanceDictionary(vandermonde(omega1, cfg.n_subcarriers), B @ np.asarray(W), grid)


def stacked_gram(dicts: list[DistanceDictionary]) -> np.ndarray:
    blocks = [[np.vdot(a.r1, b.r1) * (a.q.conj() @ b.q.T) for b in dicts] for a in dicts]
    return np.block(blocks)


@dataclass
class LassoDistances:
    distances: np.ndarray
    coefficients: list
    objective: list
    converged: bool


def lasso_distances(Y, dicts: list[DistanceDictionary], xi: float | None = None, tol: float = 1e-6,
                    max_iter: int = 3000) -> LassoDistances:
    """Joint l1 fit over the stacked per-path dictionaries.

    The distance of path ``s`` is the grid point of the largest-magnitude
    coefficient in block ``s``. ``xi`` defaults to ``0.1 ||D^H y||_inf``.

    Raises
    ------
    OverRegularizedError
        When the whole solution vanishes.
    """
    corr = np.concatenate([d.adjoint(Y) for d in dicts])
    if xi is None:
        xi = 0.1 * np.max(np.abs(corr))
    if xi <= 0:
        raise ValueError("regularisation weight must be positive")
    res = lasso_gram(stacked_gram(dicts), corr, xi, tol=tol, max_iter=max_iter)
    if not np.any(res.x):
        raise OverRegularizedError(f"all coefficients are zero at xi={xi:.3g}")
    sizes = np.cumsum([0] + [d.q.shape[0] for d in dicts])
    blocks = [res.x[a:b] for a, b in zip(sizes[:-1], sizes[1:])]
    d_hat = np.array([d.distances[int(np.argmax(np.abs(z)))] for d, z in zip(dicts, blocks)])
    return LassoDistances(d_hat, blocks, res.objective, res.converged)


# ---------------------------------------------------------------------------
# Gains
# ---------------------------------------------------------------------------


def estimate_gains(Y, omega1s, positions, W, cfg: ScenarioConfig, layout: RisLayout | None = None,
                   cond_max: float = 1e12) -> np.ndarray:
    """``rho_s = [C]_{:,s}^dagger [Y Q^dagger]_{:,s}`` with ``Q = sqrt(P) B^T W``."""
    layout = cfg.layout if layout is None else layout
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    B = combined_steering(positions, cfg.p_bs, layout, cfg.wavelength)  # (S, N_R)
    Q = np.sqrt(cfg.tx_power) * (B @ np.asarray(W))
    sv = np.linalg.svd(Q, compute_uv=False)
    if sv[-1] == 0 or sv[0] / sv[-1] > cond_max:
        raise IllConditionedError("profile does not separate the paths (Q rank deficient)")
    YQ = np.asarray(Y) @ np.linalg.pinv(Q)
    C = vandermonde(np.asarray(omega1s, dtype=float), cfg.n_subcarriers).T
    return np.einsum("ns,ns->s", C.conj(), YQ) / cfg.n_subcarriers


# ---------------------------------------------------------------------------
# Full coarse stage
# ---------------------------------------------------------------------------


@dataclass
class CoarseEstimate:
    params: ChannelParams
    cpd: CpdOmpResult
    lasso: LassoDistances | None


def coarse_estimate(Y, profile: KroneckerProfile, cfg: ScenarioConfig, n_paths: int | None = None,
                    grid=None, xi: float | None = None) -> CoarseEstimate:
    """CPD-OMP, then LASSO distances and least-squares gains. Paths sorted by delay."""
    cpd = cpd_omp(Y, profile, cfg, n_paths=n_paths)
    if not cpd.paths:
        raise ValueError("no path could be extracted from the observation")
    paths = sorted(cpd.paths, key=lambda p: p.tau)
    W = profile.matrix
    grid = default_distance_grid(cfg.layout, cfg.wavelength) if grid is None else grid
    dicts = [build_distance_dictionary(p.omegas[0], p.phi_el, p.phi_az, grid, W, cfg) for p in paths]
    fit = lasso_distances(Y, dicts, xi)
    positions = [position_from_spherical(d, p.phi_el, p.phi_az, cfg.p_ris) for d, p in zip(fit.distances, paths)]
    rhos = estimate_gains(Y, [p.omegas[0] for p in paths], positions, W, cfg)
    params = ChannelParams([PathParams(complex(r), p.phi_el, p.phi_az, float(d), p.tau)
                            for r, p, d in zip(rhos, paths, fit.distances)])
    return CoarseEstimate(params, cpd, fit)


def forward_frequencies(path: PathParams, cfg: ScenarioConfig, layout: RisLayout | None = None):
    layout = cfg.layout if layout is None else layout
    theta_el, theta_az, _ = spherical_from_position(cfg.p_bs, layout.center)
    return geometry_to_frequencies(path.tau, path.phi_el, path.phi_az, theta_el, theta_az,
                                   cfg.wavelength, layout.spacing, cfg.subcarrier_spacing)


__all__ = [
    "CoarseEstimate", "CoarsePath", "CpdOmpResult", "DistanceDictionary", "LassoDistances",
    "build_distance_dictionary", "coarse_estimate", "cpd_omp", "default_distance_grid", "delay_vector",
    "estimate_gains", "fit_frequency", "fit_mode_frequency", "forward_frequencies",
    "frequencies_to_geometry", "geometry_to_frequencies", "lasso_distances", "mode_vector",
]

"""PEB-driven RIS phase-profile design.

The position-domain FIM depends on the profile only through ``Lambda = W W^H``:

    F = (2 / sigma^2) sum_n J Re{K[n]^H conj(Lambda) K[n]} J^T,

and every ``K_s[n]`` factors as ``B_s C_s[n]`` with the four-column basis
``B_s = [b, db/dphi_el, db/dphi_az, db/dd]``. Restricting
``conj(Lambda) = B Xi B^H`` turns the design into a small problem over the
``4S x 4S`` Hermitian matrix ``Xi``. Unit-modulus profiles are recovered by
Gaussian randomisation.

By default the design keeps the path gains as nuisance unknowns (full
Jacobian). ``known_gains=True`` drops them and optimises the FIM of
``[p_0, ..., p_Ns, Delta]`` alone; :func:`fim_from_covariance` always returns
that reduced FIM.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .crb import bounds, jacobian_position, position_vector
from .exceptions import UnidentifiableError
from .geometry import C_LIGHT, ChannelParams, ScenarioConfig, steering_with_derivatives
from .optim import nelder_mead

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# K[n] factorisation
# ---------------------------------------------------------------------------


def path_basis(path, cfg: ScenarioConfig) -> np.ndarray:
    """``B_s``, shape (N_R, 4)."""
    return steering_with_derivatives(path.d, path.phi_el, path.phi_az, cfg).T


def coefficient_matrices(path, cfg: ScenarioConfig) -> np.ndarray:
    """``C_s[n]`` for every subcarrier, shape (N, 4, 6), so that ``K_s[n] = B_s C_s[n]``."""
    n = np.arange(cfg.n_subcarriers)
    ph = np.sqrt(cfg.tx_power) * np.exp(-2j * np.pi * path.tau * cfg.subcarrier_spacing * n)
    C = np.zeros((cfg.n_subcarriers, 4, 6), dtype=complex)
    C[:, 0, 0] = 1.0
    C[:, 0, 1] = 1j
    C[:, 0, 5] = path.rho * (-2j * np.pi * cfg.subcarrier_spacing * n)
    C[:, 1, 2] = path.rho
    C[:, 2, 3] = path.rho
    C[:, 3, 4] = path.rho
    return C * ph[:, None, None]


def k_matrix(path, n: int, cfg: ScenarioConfig) -> np.ndarray:
    """``K_s[n]`` (N_R x 6); ``W^T K_s[n]`` are the partials of ``mu[n]``."""
    return path_basis(path, cfg) @ coefficient_matrices(path, cfg)[n]


def prior_position_vector(eta: ChannelParams, cfg: ScenarioConfig) -> np.ndarray:
    """Position-domain vector implied by channel parameters (clock from the UE path)."""
    pos = eta.positions(cfg.p_ris)
    delta = eta[0].tau - (eta[0].d + cfg.d_bs) / C_LIGHT
    return position_vector(pos, delta, eta.rhos)


def design_jacobian(eta: ChannelParams, cfg: ScenarioConfig, known_gains: bool = False, path=None):
    """Rows of the position-domain Jacobian used by the design.

    With ``path=None`` all paths are kept. With ``path=s`` only ``p_s``, the
    clock offset and (unless ``known_gains``) the gain of path ``s`` remain,
    restricted to that path's channel entries.
    """
    S = len(eta)
    J = jacobian_position(prior_position_vector(eta, cfg), cfg)
    if path is None:
        return J[: 3 * S + 1] if known_gains else J
    rows = [3 * path, 3 * path + 1, 3 * path + 2, 3 * S]
    if not known_gains:
        rows += [3 * S + 1 + path, 4 * S + 1 + path]
    return J[np.ix_(rows, np.arange(6 * path, 6 * path + 6))]


class FimModel:
    """Position-domain FIM as a linear function of ``Xi``.

    Parameters
    ----------
    eta : ChannelParams
        Prior channel parameters.
    cfg : ScenarioConfig
    paths : sequence of int, optional
        Paths included in the basis (default all).
    J : ndarray, optional
        Jacobian rows by ``6 len(paths)`` channel entries; defaults to
        :func:`design_jacobian` with ``known_gains``.
    known_gains : bool
        Drop the gains from the unknowns (default keeps them as nuisance
        parameters).
    """

    def __init__(self, eta: ChannelParams, cfg: ScenarioConfig, paths=None, J=None, known_gains: bool = False):
        paths = list(range(len(eta))) if paths is None else list(paths)
        self.cfg = cfg
        self.paths = paths
        if J is None:
            J = design_jacobian(eta, cfg, known_gains)
        self.J = J
        blocks = [path_basis(eta[s], cfg) for s in paths]
        B = np.hstack(blocks)
        self.scale = np.linalg.norm(B, axis=0)
        self.B = B / self.scale  # unit-norm columns keep Xi well scaled
        k = len(paths)
        C = np.zeros((cfg.n_subcarriers, 4 * k, 6 * k), dtype=complex)
        for i, s in enumerate(paths):
            C[:, 4 * i:4 * i + 4, 6 * i:6 * i + 6] = coefficient_matrices(eta[s], cfg)
        self.C = C * self.scale[None, :, None]
        self.gram = self.B.conj().T @ self.B
        self.M = self.gram[None] @ self.C  # (N, 4k, 6k)
        self.rows_sq = np.abs(self.B) ** 2

    @property
    def dim(self) -> int:
        return self.B.shape[1]

    def channel_info(self, Xi) -> np.ndarray:
        """``sum_n Re{M_n^H Xi M_n}``."""
        G = np.einsum("nai,ab,nbj->ij", self.M.conj(), Xi, self.M, optimize=True)
        return G.real

    def fim(self, Xi) -> np.ndarray:
        F = (2.0 / self.cfg.noise_variance) * self.J @ self.channel_info(Xi) @ self.J.T
        return 0.5 * (F + F.T)

    def trace_gradient(self, Xi, E):
        """``tr(E^T F^{-1} E)`` and its Hermitian gradient w.r.t. ``Xi``."""
        F = self.fim(Xi)
        FiE = np.linalg.solve(F, E)
        val = float(np.trace(E.T @ FiE))
        A = self.J.T @ (FiE @ FiE.T) @ self.J
        G = -(2.0 / self.cfg.noise_variance) * np.einsum("nai,ij,nbj->ab", self.M, A, self.M.conj(), optimize=True)
        return val, 0.5 * (G + G.conj().T)

    def diag(self, Xi) -> np.ndarray:
        """``diag(B Xi B^H)`` (real)."""
        return np.einsum("ra,ab,rb->r", self.B, Xi, self.B.conj(), optimize=True).real

    def covariance(self, Xi) -> np.ndarray:
        """``Lambda = conj(B Xi B^H)``, the profile covariance ``W W^H``."""
        return (self.B @ Xi @ self.B.conj().T).conj()

    def factor(self, Xi) -> np.ndarray:
        """``L`` with ``L L^H = Lambda``, shape (N_R, rank)."""
        w, V = np.linalg.eigh(0.5 * (Xi + Xi.conj().T))
        keep = w > w.max() * 1e-12
        return (self.B @ V[:, keep]).conj() * np.sqrt(w[keep])


def fim_from_covariance(eta: ChannelParams, Lambda, cfg: ScenarioConfig) -> np.ndarray:
    """Reduced FIM for an arbitrary profile covariance ``Lambda = W W^H``."""
    S = len(eta)
    J = jacobian_position(prior_position_vector(eta, cfg), cfg)[: 3 * S + 1]
    B = np.hstack([path_basis(p, cfg) for p in eta])
    C = np.zeros((cfg.n_subcarriers, 4 * S, 6 * S), dtype=complex)
    for s, p in enumerate(eta):
        C[:, 4 * s:4 * s + 4, 6 * s:6 * s + 6] = coefficient_matrices(p, cfg)
    core = B.conj().T @ np.asarray(Lambda).conj() @ B
    G = np.einsum("nai,ab,nbj->ij", C.conj(), core, C, optimize=True).real
    F = (2.0 / cfg.noise_variance) * J @ G @ J.T
    return 0.5 * (F + F.T)


# ---------------------------------------------------------------------------
# Covariance design
# ---------------------------------------------------------------------------


def project_psd(X) -> np.ndarray:
    X = 0.5 * (X + X.conj().T)
    w, V = np.linalg.eigh(X)
    return (V * np.clip(w, 0.0, None)) @ V.conj().T


@dataclass
class CovarianceSolution:
    Xi: np.ndarray
    model: FimModel
    objective: float
    peb_sq: float
    diag_error: float
    n_iter: int
    history: list

    @property
    def Lambda(self) -> np.ndarray:
        return self.model.covariance(self.Xi)


class _Objective:
    """``tr(E^T F^{-1} E) / ref + gamma ||diag(B Xi B^H) - T|| / (T sqrt(N_R))``."""

    def __init__(self, model: FimModel, n_symbols: int, gamma: float, n_target: int = 3):
        self.model = model
        self.T = n_symbols
        self.gamma = gamma
        self.E = np.eye(model.J.shape[0])[:, :n_target]
        self.norm = n_symbols * np.sqrt(model.B.shape[0])
        self.ref = 1.0

    def value_grad(self, Xi, grad: bool = True):
        try:
            tr, G = self.model.trace_gradient(Xi, self.E)
        except np.linalg.LinAlgError:
            return np.inf, None, np.inf
        if not np.isfinite(tr) or tr <= 0:
            return np.inf, None, np.inf
        v = self.model.diag(Xi) - self.T
        nv = float(np.linalg.norm(v))
        val = tr / self.ref + self.gamma * nv / self.norm
        if not grad:
            return val, None, tr
        Gp = G / self.ref
        if nv > 0:
            B = self.model.B
            Gp = Gp + (self.gamma / self.norm) * (B.conj().T * (v / nv)) @ B
        return val, 0.5 * (Gp + Gp.conj().T), tr


def uniform_xi(model: FimModel, n_symbols: int) -> np.ndarray:
    """``c I`` with ``mean(diag(B Xi B^H)) = T``."""
    return n_symbols / model.rows_sq.sum(axis=1).mean() * np.eye(model.dim, dtype=complex)


def _projected_gradient(obj: _Objective, Xi0, max_iter: int, tol: float):
    Xi = project_psd(Xi0)
    val, G, tr = obj.value_grad(Xi)
    if not np.isfinite(val):
        raise FloatingPointError("objective is not finite at the starting point")
    step = 1.0 / max(np.linalg.norm(G), 1e-300) * np.linalg.norm(Xi)
    history = [val]
    stall = 0
    it = 0
    for it in range(1, max_iter + 1):
        accepted = False
        for _ in range(60):
            cand = project_psd(Xi - step * G)
            cval, cG, ctr = obj.value_grad(cand)
            if cval < val:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        rel = (val - cval) / max(abs(val), 1e-300)
        Xi, val, G, tr = cand, cval, cG, ctr
        history.append(val)
        step *= 1.5
        stall = stall + 1 if rel < tol else 0
        if stall >= 10:
            break
    return Xi, val, tr, it, history


def _solve(model: FimModel, cfg: ScenarioConfig, gamma: float, Xi0=None, max_iter: int = 5000,
           tol: float = 1e-9) -> CovarianceSolution:
    T = cfg.n_symbols
    obj = _Objective(model, T, gamma)
    start = uniform_xi(model, T) if Xi0 is None else Xi0
    try:
        _, _, tr0 = obj.value_grad(start, grad=False)
        if not np.isfinite(tr0):
            raise FloatingPointError("uniform start has a singular FIM")
        obj.ref = tr0
        Xi, val, tr, it, hist = _projected_gradient(obj, start, max_iter, tol)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        warnings.warn(f"covariance design failed ({exc}); using the uniform covariance")
        Xi = uniform_xi(model, T)
        val, _, tr = obj.value_grad(Xi, grad=False)
        it, hist = 0, [val]
    diag_err = float(np.linalg.norm(model.diag(Xi) - T) / obj.norm)
    return CovarianceSolution(Xi, model, float(val), float(tr), diag_err, it, hist)


DEFAULT_GAMMA = 10.0


def solve_reduced_sdp(eta_prior: ChannelParams, cfg: ScenarioConfig, gamma: float = DEFAULT_GAMMA,
                      max_iter: int = 5000, known_gains: bool = False) -> CovarianceSolution:
    """Joint design of the full ``4S x 4S`` matrix ``Xi``.

    Minimises the UE position bound ``tr([F^{-1}]_{p_0})`` with an exact
    l2 penalty on the deviation of ``diag(Lambda)`` from ``T``. Solved by
    projected gradient with backtracking; the PSD projection clips negative
    eigenvalues.
    """
    return _solve(FimModel(eta_prior, cfg, known_gains=known_gains), cfg, gamma, max_iter=max_iter)


@dataclass
class BlockSolution:
    blocks: list
    weights: np.ndarray
    combined: CovarianceSolution


def solve_blockdiag(eta_prior: ChannelParams, cfg: ScenarioConfig, gamma: float = DEFAULT_GAMMA,
                    max_iter: int = 5000, known_gains: bool = False) -> BlockSolution:
    """Block-diagonal approximation ``Lambda ~ sum_s lambda_s Lambda_s``.

    Every path gets its own ``4 x 4`` design minimising the bound on its own
    position (with the clock offset), then non-negative weights are chosen
    for the full UE objective.
    """
    S = len(eta_prior)
    blocks = []
    for s in range(S):
        Js = design_jacobian(eta_prior, cfg, known_gains, path=s)
        blocks.append(_solve(FimModel(eta_prior, cfg, paths=[s], J=Js), cfg, gamma, max_iter=max_iter))
    full = FimModel(eta_prior, cfg, known_gains=known_gains)
    obj = _Objective(full, cfg.n_symbols, gamma)
    _, _, tr0 = obj.value_grad(uniform_xi(full, cfg.n_symbols), grad=False)
    obj.ref = tr0 if np.isfinite(tr0) else 1.0

    def assemble(lam):
        Xi = np.zeros((4 * S, 4 * S), dtype=complex)
        for s, blk in enumerate(blocks):
            Xi[4 * s:4 * s + 4, 4 * s:4 * s + 4] = lam[s] * blk.Xi
        return Xi

    def f(x):
        val = obj.value_grad(assemble(np.abs(x)), grad=False)[0]
        return val if np.isfinite(val) else 1e300

    if S == 1:
        lam = np.ones(1)
    else:
        res = nelder_mead(f, np.full(S, 1.0 / S), step=0.25 / S, tol=1e-10, max_evals=2000)
        lam = np.abs(res.x)
    Xi = assemble(lam)
    val, _, tr = obj.value_grad(Xi, grad=False)
    diag_err = float(np.linalg.norm(full.diag(Xi) - cfg.n_symbols) / obj.norm)
    combined = CovarianceSolution(Xi, full, float(val), float(tr), diag_err, 0, [val])
    return BlockSolution(blocks, lam, combined)


# ---------------------------------------------------------------------------
# Unit-modulus recovery
# ---------------------------------------------------------------------------


def covariance_factor(Lambda) -> np.ndarray:
    """``U Sigma^{1/2}`` from the eigendecomposition of ``Lambda`` (numerically nonzero part)."""
    w, U = np.linalg.eigh(0.5 * (Lambda + np.asarray(Lambda).conj().T))
    keep = w > max(w.max(), 0.0) * 1e-12
    return U[:, keep] * np.sqrt(w[keep])


def draw_candidate(factor, T: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One draw: ``W~ = U Sigma^{1/2} R`` and its unit-modulus projection."""
    r = factor.shape[1]
    R = (rng.standard_normal((r, T)) + 1j * rng.standard_normal((r, T))) / np.sqrt(2.0)
    Wt = factor @ R
    ref = Wt[-1, -1]
    W = np.exp(1j * np.angle(Wt / ref if ref != 0 else Wt))
    return Wt, W


def profile_peb(W, eta: ChannelParams, cfg: ScenarioConfig, eta_p=None) -> float:
    try:
        return bounds(eta, W, cfg, eta_p).peb
    except UnidentifiableError:
        return np.inf


def gaussian_randomization(Lambda, T: int, n_draws: int, eta_prior: ChannelParams, cfg: ScenarioConfig,
                           rng: np.random.Generator, factor=None) -> tuple[np.ndarray, float]:
    """Best of ``n_draws`` unit-modulus profiles drawn around the covariance ``Lambda``.

    ``factor`` (``L`` with ``L L^H = Lambda``) can replace the eigendecomposition
    of ``Lambda``; pass ``Lambda=None`` then. Ties go to the earliest draw.
    """
    factor = covariance_factor(Lambda) if factor is None else factor
    eta_p = prior_position_vector(eta_prior, cfg)
    best, best_peb = None, np.inf
    for _ in range(n_draws):
        _, W = draw_candidate(factor, T, rng)
        peb = profile_peb(W, eta_prior, cfg, eta_p)
        if best is None or peb < best_peb:
            best, best_peb = W, peb
    return best, float(best_peb)


def optimize_profile(eta_prior: ChannelParams, cfg: ScenarioConfig, method: str = "opt2",
                     gamma: float = DEFAULT_GAMMA, n_draws: int = 100,
                     rng: np.random.Generator | None = None, known_gains: bool = False,
                     max_iter: int = 5000) -> tuple[np.ndarray, float]:
    """Design ``Lambda`` (``opt1`` joint, ``opt2`` block-diagonal) and randomise to a profile."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    if method == "opt1":
        sol = solve_reduced_sdp(eta_prior, cfg, gamma, max_iter, known_gains)
    elif method == "opt2":
        sol = solve_blockdiag(eta_prior, cfg, gamma, max_iter, known_gains).combined
    else:
        raise ValueError(f"unknown design method {method!r}")
    return gaussian_randomization(None, cfg.n_symbols, n_draws, eta_prior, cfg, rng,
                                  factor=sol.model.factor(sol.Xi))


def save_profile(path, W) -> None:
    """Plain-text profile: header ``N_R T`` then one ``re,im`` token per entry, row by row."""
    W = np.asarray(W)
    with open(path, "w") as fh:
        fh.write(f"{W.shape[0]} {W.shape[1]}\n")
        for row in W:
            fh.write(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row) + "\n")


def load_profile(path) -> np.ndarray:
    with open(path) as fh:
        n_r, T = (int(v) for v in fh.readline().split())
        rows = []
        for line in fh:
            if line.strip():
                rows.append([complex(*map(float, tok.split(","))) for tok in line.split()])
    W = np.array(rows, dtype=complex)
    if W.shape != (n_r, T):
        raise ValueError(f"profile file declares {n_r}x{T} but holds {W.shape}")
    return W

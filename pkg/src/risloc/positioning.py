"""From channel parameters to UE/scatterer positions and clock offset (EXIP)."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .crb import channel_from_position, fim_channel, jacobian_position, peb_ceb, position_vector
from .exceptions import UnidentifiableError
from .geometry import C_LIGHT, ChannelParams, ScenarioConfig, position_from_spherical
from .optim import nelder_mead_restarts

log = logging.getLogger(__name__)

MIN_THRESHOLD = 5e-9


@dataclass
class PositionSolution:
    p0: np.ndarray
    scatterers: np.ndarray
    delta: float
    used_paths: list = field(default_factory=lambda: [0])
    objective: float = 0.0
    init_objective: float = 0.0

    @property
    def positions(self) -> np.ndarray:
        return np.vstack([self.p0[None, :], self.scatterers.reshape(-1, 3)])


def init_solution(eta_hat: ChannelParams, cfg: ScenarioConfig) -> PositionSolution:
    """Positions from the spherical parameters, clock offset from the UE path delay."""
    pos = eta_hat.positions(cfg.p_ris)
    p0 = eta_hat[0]
    delta = p0.tau - (p0.d + cfg.d_bs) / C_LIGHT
    return PositionSolution(pos[0], pos[1:], float(delta), list(range(len(eta_hat))))


def path_offsets(eta_hat: ChannelParams, init: PositionSolution, cfg: ScenarioConfig) -> np.ndarray:
    """Clock offset implied by each scatterer path given the UE estimate."""
    out = np.full(len(eta_hat), init.delta)
    for s in range(1, len(eta_hat)):
        ps = position_from_spherical(eta_hat[s].d, eta_hat[s].phi_el, eta_hat[s].phi_az, cfg.p_ris)
        detour = eta_hat[s].d + np.linalg.norm(ps - init.p0)
        out[s] = eta_hat[s].tau - (cfg.d_bs + detour) / C_LIGHT
    return out


def filter_paths(eta_hat: ChannelParams, init: PositionSolution, cfg: ScenarioConfig,
                 threshold: float) -> list[int]:
    """Keep path ``s`` when its implied clock offset agrees with the UE path's within ``threshold``."""
    off = path_offsets(eta_hat, init, cfg)
    return [0] + [s for s in range(1, len(eta_hat)) if abs(off[s] - init.delta) <= threshold]


def default_threshold(ceb: float | None) -> float:
    """Three standard deviations of the clock estimate, at least 5 ns."""
    if ceb is None or not np.isfinite(ceb):
        return MIN_THRESHOLD
    return max(3.0 * ceb, MIN_THRESHOLD)


def _subset(eta_hat: ChannelParams, used) -> ChannelParams:
    return ChannelParams([eta_hat[s] for s in used])


def _geometric_weight(F) -> np.ndarray:
    """Profile the gains out of ``r^T F r``: Schur complement on the geometric entries."""
    S = F.shape[0] // 6
    idx = np.arange(6 * S).reshape(S, 6)
    g = idx[:, 2:].ravel()
    r = idx[:, :2].ravel()
    Frr = F[np.ix_(r, r)]
    Fgr = F[np.ix_(g, r)]
    Wg = F[np.ix_(g, g)] - Fgr @ np.linalg.solve(Frr, Fgr.T)
    return 0.5 * (Wg + Wg.T)


def _geometric_residual(eta_vec, f_vec) -> np.ndarray:
    r = (eta_vec - f_vec).reshape(-1, 6)[:, 2:].copy()
    r[:, 1] = np.angle(np.exp(1j * r[:, 1]))  # azimuth wraps
    return r.ravel()


def exip_wls(eta_hat: ChannelParams, fim, init: PositionSolution, cfg: ScenarioConfig,
             used: list[int] | None = None, tol: float = 1e-8, max_evals: int = 6000) -> PositionSolution:
    """Weighted least-squares fit of the geometry to the channel estimates.

    Minimises ``[eta_hat - f(eta_p)]^T F [eta_hat - f(eta_p)]`` over the
    positions of the used paths and the clock offset. The gains in ``f`` are
    free and enter linearly, so they are minimised out exactly via the Schur
    complement of ``F`` on the gain entries.

    Parameters
    ----------
    eta_hat : ChannelParams
        Estimated channel parameters (all paths).
    fim : ndarray
        Channel FIM evaluated at ``eta_hat`` (all paths).
    init : PositionSolution
    cfg : ScenarioConfig
    used : list of int, optional
        Paths to fit; path 0 is always included.
    """
    used = sorted(set([0] + list(init.used_paths if used is None else used)))
    sub = _subset(eta_hat, used)
    ix = np.concatenate([np.arange(6 * s, 6 * s + 6) for s in used])
    F = np.asarray(fim)[np.ix_(ix, ix)]
    try:
        peb_ceb(F, len(used))  # cheap identifiability probe of the equilibrated FIM
        Wg = _geometric_weight(F)
    except (UnidentifiableError, np.linalg.LinAlgError):
        warnings.warn("channel FIM is singular; falling back to identity weighting")
        Wg = np.eye(4 * len(used))
    eta_vec = sub.to_vector()
    rhos = sub.rhos
    S = len(used)
    all_pos = init.positions
    x0 = np.concatenate([all_pos[used].ravel(), [C_LIGHT * init.delta]])

    def objective(x):
        eta_p = position_vector(x[:-1].reshape(S, 3), x[-1] / C_LIGHT, rhos)
        r = _geometric_residual(eta_vec, channel_from_position(eta_p, cfg))
        return float(r @ Wg @ r)

    f0 = objective(x0)
    res = nelder_mead_restarts(objective, x0, 1e-2, tol=tol, max_evals=max_evals, adaptive=True)
    x = res.x if res.fun <= f0 else x0
    pos = x[:-1].reshape(S, 3)
    return PositionSolution(pos[0].copy(), pos[1:].copy(), float(x[-1] / C_LIGHT), used,
                            min(res.fun, f0), f0)


def locate(eta_hat: ChannelParams, W, cfg: ScenarioConfig, threshold: float | None = None) -> PositionSolution:
    """Initial solution, path screening and EXIP refinement in one call."""
    init = init_solution(eta_hat, cfg)
    F = fim_channel(eta_hat, W, cfg)
    if threshold is None:
        ceb = None
        try:
            J = jacobian_position(position_vector(init.positions, init.delta, eta_hat.rhos), cfg)
            ceb = peb_ceb(J @ F @ J.T, len(eta_hat))[1]
        except (UnidentifiableError, ValueError):
            log.debug("CEB unavailable at the estimate; using the minimum threshold")
        threshold = default_threshold(ceb)
    used = filter_paths(eta_hat, init, cfg, threshold)
    init.used_paths = used
    return exip_wls(eta_hat, F, init, cfg, used)

"""Fisher information, the channel-to-position Jacobian and the PEB/CEB bounds.

Parameter orderings
-------------------
Channel domain, per path ``s``: ``[Re rho, Im rho, phi_el, phi_az, d, tau]``,
stacked over paths (length ``6 S`` with ``S = N_s + 1``).

Position domain: ``[p_0, p_1, ..., p_Ns, Delta, Re rho, Im rho]`` with every
``p`` a 3-vector (length ``5 S + 1``). ``Delta`` sits at index ``3 S``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateGeometryError, UnidentifiableError
from .geometry import C_LIGHT, ChannelParams, ScenarioConfig, delay_vector, steering_with_derivatives

EIG_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Channel-domain derivatives and FIM
# ---------------------------------------------------------------------------


def signal_derivatives(eta: ChannelParams, W, cfg: ScenarioConfig):
    """Noise-free mean and its partials for every subcarrier and symbol.

    Returns
    -------
    mu : ndarray, shape (N, T)
    dmu : ndarray, shape (6 S, N, T)
        ``dmu[6 s + k]`` is the partial w.r.t. the ``k``-th parameter of path ``s``.
    """
    W = np.asarray(W)
    sp = np.sqrt(cfg.tx_power)
    n = np.arange(cfg.n_subcarriers)
    mu = np.zeros((cfg.n_subcarriers, W.shape[1]), dtype=complex)
    parts = []
    for path in eta:
        Bs = steering_with_derivatives(path.d, path.phi_el, path.phi_az, cfg)
        Q = Bs @ W  # rows: q, dq/del, dq/daz, dq/dd
        e = delay_vector(path.tau, cfg)
        base = sp * np.outer(e, Q[0])
        mu += path.rho * base
        dtau = -2j * np.pi * cfg.subcarrier_spacing * n
        parts.extend([
            base,
            1j * base,
            sp * path.rho * np.outer(e, Q[1]),
            sp * path.rho * np.outer(e, Q[2]),
            sp * path.rho * np.outer(e, Q[3]),
            path.rho * dtau[:, None] * base,
        ])
    return mu, np.stack(parts)


def mu_and_derivatives(eta: ChannelParams, t: int, n: int, W, cfg: ScenarioConfig):
    """``mu_t[n]`` and its ``6 S`` partials for one symbol and subcarrier (zero based)."""
    W = np.asarray(W)
    mu, dmu = signal_derivatives(eta, W[:, [t]], cfg)
    return mu[n, 0], dmu[:, n, 0]


def fim_channel(eta: ChannelParams, W, cfg: ScenarioConfig) -> np.ndarray:
    """``F(eta) = (2 / sigma^2) sum_{t, n} Re{dmu^H dmu}``."""
    _, dmu = signal_derivatives(eta, W, cfg)
    D = dmu.reshape(dmu.shape[0], -1)
    F = (2.0 / cfg.noise_variance) * (D.conj() @ D.T).real
    return 0.5 * (F + F.T)


# ---------------------------------------------------------------------------
# Position-domain transformation
# ---------------------------------------------------------------------------


def position_vector(positions, delta: float, rhos) -> np.ndarray:
    """Stack ``[p_0, ..., p_Ns, Delta, Re rho, Im rho]``."""
    rhos = np.asarray(rhos, dtype=complex)
    return np.concatenate([np.asarray(positions, dtype=float).ravel(), [delta], rhos.real, rhos.imag])


def split_position_vector(eta_p, n_paths: int):
    eta_p = np.asarray(eta_p, dtype=float)
    S = n_paths
    pos = eta_p[: 3 * S].reshape(S, 3)
    delta = float(eta_p[3 * S])
    rhos = eta_p[3 * S + 1: 4 * S + 1] + 1j * eta_p[4 * S + 1: 5 * S + 1]
    return pos, delta, rhos


def true_position_vector(cfg: ScenarioConfig, eta: ChannelParams) -> np.ndarray:
    return position_vector(cfg.targets, cfg.clock_offset, eta.rhos)


def channel_from_position(eta_p, cfg: ScenarioConfig) -> np.ndarray:
    """Geometry map ``f(eta_p)`` to the stacked channel vector."""
    S = (len(eta_p) - 1) // 5
    pos, delta, rhos = split_position_vector(eta_p, S)
    out = np.empty(6 * S)
    for s in range(S):
        v = pos[s] - cfg.p_ris
        d = np.linalg.norm(v)
        if d == 0.0:
            raise DegenerateGeometryError("target coincides with the RIS centre")
        detour = d if s == 0 else d + np.linalg.norm(pos[0] - pos[s])
        out[6 * s: 6 * s + 6] = [rhos[s].real, rhos[s].imag, np.arccos(np.clip(v[2] / d, -1, 1)),
                                 np.arctan2(v[1], v[0]), d, (cfg.d_bs + detour) / C_LIGHT + delta]
    return out


def jacobian_position(eta_p, cfg: ScenarioConfig) -> np.ndarray:
    """``J[i, j] = d eta_j / d eta_p,i``, shape ``(5 S + 1, 6 S)``."""
    eta_p = np.asarray(eta_p, dtype=float)
    S = (eta_p.size - 1) // 5
    pos, _, _ = split_position_vector(eta_p, S)
    J = np.zeros((5 * S + 1, 6 * S))
    i_delta = 3 * S
    for s in range(S):
        v = pos[s] - cfg.p_ris
        d = np.linalg.norm(v)
        if d == 0.0:
            raise DegenerateGeometryError("target coincides with the RIS centre")
        el, az = np.arccos(np.clip(v[2] / d, -1, 1)), np.arctan2(v[1], v[0])
        se, ce, sa, ca = np.sin(el), np.cos(el), np.sin(az), np.cos(az)
        if se == 0.0:
            raise DegenerateGeometryError("azimuth undefined for a target on the RIS normal to x-o-y")
        u = v / d
        rows = slice(3 * s, 3 * s + 3)
        c = 6 * s
        J[rows, c + 2] = np.array([ce * ca, ce * sa, -se]) / d
        J[rows, c + 3] = np.array([-sa, ca, 0.0]) / (d * se)
        J[rows, c + 4] = u
        if s == 0:
            J[rows, c + 5] = u / C_LIGHT
        else:
            w = pos[s] - pos[0]
            dw = np.linalg.norm(w)
            if dw == 0.0:
                raise DegenerateGeometryError("scatterer coincides with the UE")
            J[rows, c + 5] = (u + w / dw) / C_LIGHT
            J[0:3, c + 5] = -w / dw / C_LIGHT
        J[i_delta, c + 5] = 1.0
        J[3 * S + 1 + s, c] = 1.0
        J[4 * S + 1 + s, c + 1] = 1.0
    return J


# ---------------------------------------------------------------------------
# Inversion and bounds
# ---------------------------------------------------------------------------


def stable_inverse(F, floor: float = EIG_FLOOR) -> np.ndarray:
    """Inverse of a symmetric PSD matrix after Jacobi equilibration.

    Raises
    ------
    UnidentifiableError
        If an eigenvalue of the equilibrated matrix falls below
        ``floor * lambda_max``; ``null_space`` holds the offending directions.
    """
    F = 0.5 * (np.asarray(F, dtype=float) + np.asarray(F, dtype=float).T)
    diag = np.diag(F).copy()
    dead = diag <= 0
    if np.any(dead):
        ns = np.eye(F.shape[0])[:, dead]
        raise UnidentifiableError(f"{int(dead.sum())} parameter(s) carry no information", ns)
    s = 1.0 / np.sqrt(diag)
    G = s[:, None] * F * s[None, :]
    w, V = np.linalg.eigh(G)
    bad = w < floor * w[-1]
    if np.any(bad):
        ns = s[:, None] * V[:, bad]
        ns /= np.linalg.norm(ns, axis=0)
        raise UnidentifiableError(f"FIM is singular ({int(bad.sum())} direction(s) below the floor)", ns)
    inv = (V / w) @ V.T
    out = s[:, None] * inv * s[None, :]
    return 0.5 * (out + out.T)


@dataclass
class BoundReport:
    peb: float
    ceb: float
    crb_position: np.ndarray
    fim_position: np.ndarray
    fim_channel: np.ndarray
    crb_channel: np.ndarray | None
    condition: float

    def as_row(self) -> dict:
        return {"peb": self.peb, "ceb": self.ceb, "condition": self.condition}


def peb_ceb(fim_p, n_paths: int, floor: float = EIG_FLOOR) -> tuple[float, float, np.ndarray]:
    inv = stable_inverse(fim_p, floor)
    i = 3 * n_paths
    return float(np.sqrt(np.trace(inv[:3, :3]))), float(np.sqrt(inv[i, i])), inv


def bounds(eta: ChannelParams, W, cfg: ScenarioConfig, eta_p=None) -> BoundReport:
    """PEB and CEB of the UE for profile ``W``.

    Parameters
    ----------
    eta : ChannelParams
        Channel parameters at which the FIM is evaluated.
    W : ndarray, shape (N_R, T)
    cfg : ScenarioConfig
    eta_p : array_like, optional
        Position-domain vector; defaults to the scenario truth with the gains of ``eta``.
    """
    S = len(eta)
    if eta_p is None:
        eta_p = position_vector(cfg.targets[:S], cfg.clock_offset, eta.rhos)
    F = fim_channel(eta, W, cfg)
    J = jacobian_position(eta_p, cfg)
    Fp = J @ F @ J.T
    Fp = 0.5 * (Fp + Fp.T)
    peb, ceb, inv = peb_ceb(Fp, S)
    try:
        crb_ch = stable_inverse(F)
    except UnidentifiableError:
        crb_ch = None
    d = np.sqrt(np.diag(Fp))
    w = np.linalg.eigvalsh(Fp / np.outer(d, d))
    return BoundReport(peb, ceb, np.diag(inv).copy(), Fp, F, crb_ch, float(w[-1] / w[0]))


def reduced_fim(eta: ChannelParams, W, cfg: ScenarioConfig, eta_p=None) -> np.ndarray:
    """FIM of ``[p_0, ..., p_Ns, Delta]`` with the gains treated as known."""
    S = len(eta)
    if eta_p is None:
        eta_p = position_vector(cfg.targets[:S], cfg.clock_offset, eta.rhos)
    J = jacobian_position(eta_p, cfg)[: 3 * S + 1]
    F = J @ fim_channel(eta, W, cfg) @ J.T
    return 0.5 * (F + F.T)

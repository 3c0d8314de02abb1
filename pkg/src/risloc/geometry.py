"""Scenario geometry, RIS steering vectors and the OFDM received-signal model.

Conventions used throughout the package
---------------------------------------
* The RIS lies in a plane parallel to x-o-z. Element ``r`` sits at grid
  index ``(i_x, i_z)`` with ``r = i_x * n_z + i_z`` so that the far-field
  response factorises as ``c(phi_x) kron c(phi_z)``.
* A channel parameter vector stacks, per path, ``[Re rho, Im rho, phi_el,
  phi_az, d, tau]``. Path 0 is the UE (line-of-sight through the RIS), paths
  ``1..N_s`` are single-bounce scatterer paths.
* Noise is circularly-symmetric with total variance ``sigma2`` per sample.
* Subcarrier ``n`` (zero based) carries the delay phase ``exp(-j 2 pi tau n df)``.
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .exceptions import DegenerateGeometryError

C_LIGHT = 3e8


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * np.log10(watt) + 30.0


# ---------------------------------------------------------------------------
# Layout and scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RisLayout:
    """Uniform planar RIS parallel to the x-o-z plane.

    Parameters
    ----------
    center : array_like, shape (3,)
        Geometric centre of the element grid (the reference point ``p_R``).
    n_x, n_z : int
        Number of elements along x and z.
    spacing : float
        Inter-element spacing in metres.
    """

    center: np.ndarray
    n_x: int
    n_z: int
    spacing: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.n_x < 1 or self.n_z < 1:
            raise ValueError("RIS needs at least one element per axis")

    @property
    def n_elements(self) -> int:
        return self.n_x * self.n_z

    @cached_property
    def grid_index(self) -> np.ndarray:
        """(N_R, 2) integer array of ``(i_x, i_z)`` in x-major order."""
        ix, iz = np.meshgrid(np.arange(self.n_x), np.arange(self.n_z), indexing="ij")
        return np.stack([ix.ravel(), iz.ravel()], axis=1)

    @cached_property
    def element_positions(self) -> np.ndarray:
        """(N_R, 3) element coordinates."""
        idx = self.grid_index
        off_x = (idx[:, 0] - (self.n_x - 1) / 2.0) * self.spacing
        off_z = (idx[:, 1] - (self.n_z - 1) / 2.0) * self.spacing
        pos = np.tile(self.center, (self.n_elements, 1))
        pos[:, 0] += off_x
        pos[:, 2] += off_z
        return pos

    @property
    def aperture(self) -> float:
        """Diagonal aperture between the outermost element centres."""
        return self.spacing * np.hypot(self.n_x - 1, self.n_z - 1)


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Complete physical setup of one localisation scenario (SI units).

    Powers are stored in watts; use :func:`risloc.config.scenario_from_dict`
    or :func:`risloc.config.load_config` to build one from dBm values.
    """

    p_bs: np.ndarray = field(default_factory=lambda: np.array([0.0, -60.0, 5.0]))
    p_ris: np.ndarray = field(default_factory=lambda: np.zeros(3))
    p_ue: np.ndarray = field(default_factory=lambda: np.array([3.0, 6.0, -1.0]))
    scatterers: np.ndarray = field(default_factory=lambda: np.array([[-1.0, 3.0, 2.0]]))
    clock_offset: float = 100e-9
    carrier: float = 28e9
    subcarrier_spacing: float = 120e3
    n_subcarriers: int = 80
    n_symbols: int = 256
    tx_power: float = dbm_to_watt(29.0)
    noise_variance: float = dbm_to_watt(-115.2)
    reflection_loss: float = 0.6
    n_x: int = 48
    n_z: int = 48
    spacing: float | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("p_bs", "p_ris", "p_ue"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        sc = np.asarray(self.scatterers, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "scatterers", sc)
        if self.n_subcarriers < 1 or self.n_symbols < 1:
            raise ValueError("need at least one subcarrier and one symbol")
        if not self.tx_power > 0 or not self.noise_variance > 0:
            raise ValueError("transmit power and noise variance must be positive")
        if not 0.0 <= self.reflection_loss <= 1.0:
            raise ValueError("reflection loss must lie in [0, 1]")
        arrays = (self.p_bs, self.p_ris, self.p_ue, self.scatterers)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("positions must be finite")
        if self.bandwidth / self.carrier > 0.05:
            warnings.warn("bandwidth exceeds 5% of the carrier; narrowband model is questionable")

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    @property
    def wavelength(self) -> float:
        return C_LIGHT / self.carrier

    @property
    def bandwidth(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing

    @property
    def n_scatterers(self) -> int:
        return self.scatterers.shape[0]

    @property
    def n_paths(self) -> int:
        return self.n_scatterers + 1

    @property
    def element_spacing(self) -> float:
        return self.wavelength / 2.0 if self.spacing is None else self.spacing

    @cached_property
    def layout(self) -> RisLayout:
        return RisLayout(self.p_ris, self.n_x, self.n_z, self.element_spacing)

    @property
    def d_bs(self) -> float:
        return float(np.linalg.norm(self.p_bs - self.p_ris))

    @property
    def targets(self) -> np.ndarray:
        """(N_s + 1, 3) array: UE first, then scatterers."""
        return np.vstack([self.p_ue[None, :], self.scatterers])

    @property
    def ue_side(self) -> float:
        """Sign of the y half-space holding UE and scatterers (opposite the BS)."""
        return -1.0 if self.p_bs[1] > self.p_ris[1] else 1.0


# ---------------------------------------------------------------------------
# Channel parameters
# ---------------------------------------------------------------------------


@dataclass
class PathParams:
    rho: complex
    phi_el: float
    phi_az: float
    d: float
    tau: float

    def as_array(self) -> np.ndarray:
        return np.array([self.rho.real, self.rho.imag, self.phi_el, self.phi_az, self.d, self.tau])

    @classmethod
    def from_array(cls, x) -> "PathParams":
        return cls(complex(x[0], x[1]), float(x[2]), float(x[3]), float(x[4]), float(x[5]))

    def position(self, p_ris) -> np.ndarray:
        return position_from_spherical(self.d, self.phi_el, self.phi_az, p_ris)


@dataclass
class ChannelParams:
    """Per-path parameters; index 0 is the UE path."""

    paths: list[PathParams]

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, i) -> PathParams:
        return self.paths[i]

    def __iter__(self):
        return iter(self.paths)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([p.as_array() for p in self.paths])

    @classmethod
    def from_vector(cls, eta) -> "ChannelParams":
        eta = np.asarray(eta, dtype=float).reshape(-1, 6)
        return cls([PathParams.from_array(row) for row in eta])

    def copy(self) -> "ChannelParams":
        return ChannelParams([dataclasses.replace(p) for p in self.paths])

    @property
    def rhos(self) -> np.ndarray:
        return np.array([p.rho for p in self.paths])

    @property
    def taus(self) -> np.ndarray:
        return np.array([p.tau for p in self.paths])

    def positions(self, p_ris) -> np.ndarray:
        return np.array([p.position(p_ris) for p in self.paths])


# ---------------------------------------------------------------------------
# Geometry maps
# ---------------------------------------------------------------------------


def direction(phi_el, phi_az) -> np.ndarray:
    """Unit vector ``k(phi_el, phi_az)``; broadcasts, last axis is xyz."""
    phi_el = np.asarray(phi_el, dtype=float)
    phi_az = np.asarray(phi_az, dtype=float)
    se = np.sin(phi_el)
    return np.stack([se * np.cos(phi_az), se * np.sin(phi_az), np.cos(phi_el) + 0 * phi_az], axis=-1)


def spherical_from_position(p, p_ris) -> tuple[float, float, float]:
    """Return ``(phi_el, phi_az, d)`` of ``p`` seen from ``p_ris``."""
    v = np.asarray(p, dtype=float) - np.asarray(p_ris, dtype=float)
    d = float(np.linalg.norm(v))
    if d == 0.0:
        raise DegenerateGeometryError("point coincides with the reference")
    phi_el = float(np.arccos(np.clip(v[2] / d, -1.0, 1.0)))
    phi_az = float(np.arctan2(v[1], v[0]))
    return phi_el, phi_az, d


def position_from_spherical(d, phi_el, phi_az, p_ris) -> np.ndarray:
    return np.asarray(p_ris, dtype=float) + d * direction(phi_el, phi_az)


def toas_from_geometry(cfg: ScenarioConfig, p_ue=None, scatterers=None, clock_offset=None) -> np.ndarray:
    """Times of arrival of the UE path and every scatterer path."""
    p_ue = cfg.p_ue if p_ue is None else np.asarray(p_ue, dtype=float)
    sc = cfg.scatterers if scatterers is None else np.asarray(scatterers, dtype=float).reshape(-1, 3)
    delta = cfg.clock_offset if clock_offset is None else clock_offset
    d_b = cfg.d_bs
    taus = [(d_b + np.linalg.norm(p_ue - cfg.p_ris)) / C_LIGHT + delta]
    for ps in sc:
        detour = np.linalg.norm(ps - cfg.p_ris) + np.linalg.norm(p_ue - ps)
        taus.append((d_b + detour) / C_LIGHT + delta)
    return np.array(taus)


def fresnel_bounds(layout: RisLayout, wavelength: float) -> tuple[float, float]:
    """Radiating near-field (Fresnel) range ``(0.62 sqrt(D^3/lambda), 2 D^2/lambda)``."""
    D = layout.aperture
    return 0.62 * np.sqrt(D**3 / wavelength), 2.0 * D**2 / wavelength


# ---------------------------------------------------------------------------
# Steering vectors
# ---------------------------------------------------------------------------


def _path_difference(p, layout: RisLayout) -> np.ndarray:
    # ||p - p_r|| - ||p - p_R|| written as a ratio to avoid cancellation at long range
    p = np.asarray(p, dtype=float)
    pr = layout.element_positions
    pc = layout.center
    dr = np.linalg.norm(p[..., None, :] - pr, axis=-1)
    dc = np.linalg.norm(p - pc, axis=-1)[..., None]
    if np.any(dr == 0.0):
        raise DegenerateGeometryError("point coincides with a RIS element")
    num = np.sum((pc - pr) * (2.0 * p[..., None, :] - pr - pc), axis=-1)
    return num / (dr + dc)


def nearfield_steering(p, layout: RisLayout, wavelength: float) -> np.ndarray:
    """Spherical-wavefront RIS response ``a(p)``.

    ``p`` may be a single point (3,) or a stack (..., 3); the element axis is last.
    """
    return np.exp(-2j * np.pi * _path_difference(p, layout) / wavelength)


def farfield_steering(phi_el, phi_az, layout: RisLayout, wavelength: float) -> np.ndarray:
    """Planar-wavefront response with exact ``c(phi_x) kron c(phi_z)`` structure."""
    u = layout.spacing / wavelength
    phx = 2 * np.pi * np.sin(phi_el) * np.cos(phi_az) * u
    phz = 2 * np.pi * np.cos(phi_el) * u
    beta = -phx * (layout.n_x - 1) / 2.0 - phz * (layout.n_z - 1) / 2.0
    return np.exp(1j * beta) * np.kron(vandermonde(phx, layout.n_x), vandermonde(phz, layout.n_z))


def vandermonde(omega, n: int) -> np.ndarray:
    """``c^(n)(omega) = [1, e^{j omega}, ..., e^{j (n-1) omega}]``."""
    return np.exp(1j * np.multiply.outer(np.asarray(omega, dtype=float), np.arange(n)))


def combined_steering(p, p_bs, layout: RisLayout, wavelength: float) -> np.ndarray:
    """Cascaded BS-RIS-target response ``b(p) = a(p) * a(p_B)``."""
    return nearfield_steering(p, layout, wavelength) * nearfield_steering(p_bs, layout, wavelength)


class CascadedSteering:
    """Fast repeated evaluation of ``b(p)`` for one layout and BS position.

    The BS-side response is computed once; each call costs one pass over
    the elements. Used in the inner loops of the simplex searches.
    """

    def __init__(self, layout: RisLayout, p_bs, wavelength: float):
        self.layout = layout
        self.k = -2.0 * np.pi / wavelength
        self.pr = layout.element_positions
        self.off = layout.center - self.pr
        self.const = np.einsum("ij,ij->i", self.off, self.pr + layout.center)
        self.a_bs = nearfield_steering(p_bs, layout, wavelength)

    def __call__(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        diff = p - self.pr
        dr = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        dc = np.sqrt(np.dot(p - self.layout.center, p - self.layout.center))
        num = self.off @ (2.0 * p) - self.const
        return np.exp(1j * self.k * (num / (dr + dc))) * self.a_bs


def steering_with_derivatives(d, phi_el, phi_az, cfg: ScenarioConfig, layout: RisLayout | None = None):
    """Cascaded response and its analytic partials w.r.t. ``(phi_el, phi_az, d)``.

    Returns
    -------
    ndarray, shape (4, N_R)
        Rows ``b``, ``db/dphi_el``, ``db/dphi_az``, ``db/dd``.
    """
    layout = cfg.layout if layout is None else layout
    lam = cfg.wavelength
    k = direction(phi_el, phi_az)
    p = layout.center + d * k
    se, ce = np.sin(phi_el), np.cos(phi_el)
    sa, ca = np.sin(phi_az), np.cos(phi_az)
    dp = np.array([
        d * np.array([ce * ca, ce * sa, -se]),
        d * np.array([-se * sa, se * ca, 0.0]),
        k,
    ])
    b = combined_steering(p, cfg.p_bs, layout, lam)
    # gradient of ||p - p_r|| - ||p - p_R|| w.r.t. p, per element
    diff = p - layout.element_positions
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist == 0.0):
        raise DegenerateGeometryError("point coincides with a RIS element")
    grad = diff / dist[:, None] - (p - layout.center) / np.linalg.norm(p - layout.center)
    dphase = (-2j * np.pi / lam) * (grad @ dp.T)  # (N_R, 3)
    return np.vstack([b[None, :], (dphase * b[:, None]).T])


# ---------------------------------------------------------------------------
# Signal synthesis
# ---------------------------------------------------------------------------


def synthesize_gains(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Free-space gains ``rho_s = rho_BR * rho_RU,s`` with uniform random phases."""
    lam = cfg.wavelength
    alpha = rng.uniform(0.0, 2.0 * np.pi, cfg.n_paths + 1)
    rho_br = lam / (4 * np.pi * cfg.d_bs) * np.exp(1j * alpha[0])
    d0 = np.linalg.norm(cfg.p_ue - cfg.p_ris)
    out = [rho_br * lam / (4 * np.pi * d0) * np.exp(1j * alpha[1])]
    for s, ps in enumerate(cfg.scatterers):
        detour = np.linalg.norm(ps - cfg.p_ris) + np.linalg.norm(cfg.p_ue - ps)
        out.append(rho_br * cfg.reflection_loss * lam / (4 * np.pi * detour) * np.exp(1j * alpha[s + 2]))
    return np.array(out)


def true_channel(cfg: ScenarioConfig, rng: np.random.Generator | None = None) -> ChannelParams:
    """Ground-truth channel parameters implied by the scenario geometry."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    rhos = synthesize_gains(cfg, rng)
    taus = toas_from_geometry(cfg)
    paths = []
    for rho, tau, p in zip(rhos, taus, cfg.targets):
        el, az, d = spherical_from_position(p, cfg.p_ris)
        paths.append(PathParams(complex(rho), el, az, d, float(tau)))
    return ChannelParams(paths)


def delay_vector(tau, cfg: ScenarioConfig) -> np.ndarray:
    """``c^(N)(-2 pi tau df)``."""
    return vandermonde(-2 * np.pi * tau * cfg.subcarrier_spacing, cfg.n_subcarriers)


def noiseless_signal(cfg: ScenarioConfig, eta: ChannelParams, W) -> np.ndarray:
    W = np.asarray(W)
    if W.ndim != 2 or W.shape[0] != cfg.layout.n_elements:
        raise ValueError(f"profile must be N_R x T with N_R={cfg.layout.n_elements}, got {W.shape}")
    Y = np.zeros((cfg.n_subcarriers, W.shape[1]), dtype=complex)
    p_ris = cfg.p_ris
    for path in eta:
        b = combined_steering(path.position(p_ris), cfg.p_bs, cfg.layout, cfg.wavelength)
        Y += path.rho * np.outer(delay_vector(path.tau, cfg), b @ W)
    return np.sqrt(cfg.tx_power) * Y


def complex_noise(shape, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    return np.sqrt(sigma2 / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synthesize_received(cfg: ScenarioConfig, eta: ChannelParams, W, add_noise: bool = True,
                        rng: np.random.Generator | None = None) -> np.ndarray:
    """N x T observation ``Y = sqrt(P) sum_s rho_s c(omega_s) b(p_s)^T W + Z``."""
    Y = noiseless_signal(cfg, eta, W)
    if add_noise:
        if rng is None:
            raise ValueError("a random generator is required when add_noise is set")
        Y = Y + complex_noise(Y.shape, cfg.noise_variance, rng)
    return Y


def snr_db(y_noiseless, sigma2: float) -> float:
    """Average per-sample SNR of a noise-free observation in dB."""
    y = np.asarray(y_noiseless)
    return float(10.0 * np.log10(np.sum(np.abs(y) ** 2) / (sigma2 * y.size)))


def noise_for_snr(y_noiseless, snr: float) -> float:
    """Noise variance that puts ``y_noiseless`` at ``snr`` dB."""
    y = np.asarray(y_noiseless)
    return float(np.mean(np.abs(y) ** 2) / 10.0 ** (snr / 10.0))


def as_points(points: Sequence) -> np.ndarray:
    return np.asarray(points, dtype=float).reshape(-1, 3)

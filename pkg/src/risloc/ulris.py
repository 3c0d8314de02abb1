"""Ultra-large RIS framework: sub-RIS partition, orthogonal profile blocks,
per-tile coarse estimation and bearing triangulation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coarse import cpd_omp, estimate_gains
from .exceptions import DegenerateGeometryError
from .geometry import (C_LIGHT, ChannelParams, PathParams, RisLayout, ScenarioConfig, direction,
                       spherical_from_position, toas_from_geometry)
from .positioning import PositionSolution, locate
from .refine import SageResult, sage_refine
from .tensor import build_kronecker_profile


def tile_indices(layout: RisLayout, L1: int, L2: int) -> list[np.ndarray]:
    """Global element indices of every tile, tile ``l = l1 * L2 + l2``, x-major inside each tile."""
    if L1 < 1 or L2 < 1 or layout.n_x % L1 or layout.n_z % L2:
        raise ValueError(f"cannot split {layout.n_x}x{layout.n_z} into {L1}x{L2} tiles")
    mx, mz = layout.n_x // L1, layout.n_z // L2
    out = []
    for l1 in range(L1):
        for l2 in range(L2):
            ix = np.arange(l1 * mx, (l1 + 1) * mx)
            iz = np.arange(l2 * mz, (l2 + 1) * mz)
            out.append((ix[:, None] * layout.n_z + iz[None, :]).ravel())
    return out


def partition_ris(layout: RisLayout, L1: int, L2: int) -> list[RisLayout]:
    """Contiguous rectangular tiles with centres at the tile centroids."""
    mx, mz = layout.n_x // L1, layout.n_z // L2
    pos = layout.element_positions
    return [RisLayout(pos[idx].mean(axis=0), mx, mz, layout.spacing) for idx in tile_indices(layout, L1, L2)]


def make_orthogonal_G(H: int, L: int) -> np.ndarray:
    """First ``L`` columns of the ``H``-point DFT matrix; ``G^H G = H I``."""
    if H < L:
        raise ValueError("need at least as many blocks as sub-RISs")
    h = np.arange(H)[:, None]
    l = np.arange(L)[None, :]
    return np.exp(-2j * np.pi * h * l / H)


@dataclass(eq=False)
class SubRisPlan:
    layout: RisLayout
    L1: int
    L2: int
    tiles: list
    indices: list
    G: np.ndarray
    profiles: list

    @property
    def L(self) -> int:
        return self.L1 * self.L2

    @property
    def H(self) -> int:
        return self.G.shape[0]

    @property
    def block_length(self) -> int:
        return self.profiles[0].shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return assemble_ul_profile(self)

    def apply(self, b) -> np.ndarray:
        """``b^T W`` exploiting the tile and Kronecker structure."""
        b = np.asarray(b)
        per_tile = np.stack([prof.apply(b[..., idx]) for idx, prof in zip(self.indices, self.profiles)], -2)
        return (self.G @ per_tile).reshape(b.shape[:-1] + (-1,))


def make_plan(layout: RisLayout, L1: int, L2: int, t1: int, t2: int, rng: np.random.Generator,
              H: int | None = None) -> SubRisPlan:
    """Random Kronecker sub-profiles (``t1 x t2`` symbols per block) for every tile."""
    tiles = partition_ris(layout, L1, L2)
    L = L1 * L2
    G = make_orthogonal_G(L if H is None else H, L)
    profiles = [build_kronecker_profile(t.n_x, t.n_z, t1, t2, rng) for t in tiles]
    return SubRisPlan(layout, L1, L2, tiles, tile_indices(layout, L1, L2), G, profiles)


def assemble_ul_profile(plan: SubRisPlan) -> np.ndarray:
    """In block ``h`` tile ``l`` applies ``G[h, l] W_l``; returns ``N_R x (H T~)``."""
    Tb = plan.block_length
    W = np.zeros((plan.layout.n_elements, plan.H * Tb), dtype=complex)
    for h in range(plan.H):
        for l, (idx, prof) in enumerate(zip(plan.indices, plan.profiles)):
            W[idx, h * Tb:(h + 1) * Tb] = plan.G[h, l] * prof.matrix
    return W


def separate_subris_signal(Y, plan: SubRisPlan) -> list[np.ndarray]:
    """``Y~_l = (1/H) sum_h conj(G[h, l]) Y^h`` for every tile."""
    Y = np.asarray(Y)
    Tb = plan.block_length
    blocks = Y.reshape(Y.shape[0], plan.H, Tb)
    return [np.einsum("h,nht->nt", plan.G[:, l].conj(), blocks) / plan.H for l in range(plan.L)]


def triangulate_ls(bearings, centers) -> np.ndarray:
    """Point closest, in summed squared perpendicular distance, to all rays.

    Raises
    ------
    DegenerateGeometryError
        When all bearings are parallel.
    """
    k = np.asarray(bearings, dtype=float).reshape(-1, 3)
    c = np.asarray(centers, dtype=float).reshape(-1, 3)
    k = k / np.linalg.norm(k, axis=1, keepdims=True)
    E = np.eye(3)[None, :, :] - k[:, :, None] * k[:, None, :]
    A = E.sum(axis=0)
    b = np.einsum("lij,lj->i", E, c)
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        raise DegenerateGeometryError("bearings are parallel; triangulation is undetermined")
    return np.linalg.solve(A, b)


def ulris_coarse_clock(taus, p0_hat, cfg: ScenarioConfig) -> float:
    """Average tile delay minus the geometric delay through the RIS centre."""
    return float(np.mean(taus) - (np.linalg.norm(np.asarray(p0_hat) - cfg.p_ris) + cfg.d_bs) / C_LIGHT)


@dataclass
class UlrisEstimate:
    solution: PositionSolution
    coarse: ChannelParams
    refined: SageResult


def ulris_coarse(Y, plan: SubRisPlan, cfg: ScenarioConfig, n_paths: int | None = None):
    """Per-tile CPD-OMP, triangulation and clock estimate; returns coarse channel parameters."""
    S = cfg.n_paths if n_paths is None else n_paths
    W = assemble_ul_profile(plan)
    parts = separate_subris_signal(Y, plan)
    per_tile = []
    for Yl, tile, prof in zip(parts, plan.tiles, plan.profiles):
        res = cpd_omp(Yl, prof, cfg, n_paths=S, layout=tile)
        per_tile.append(sorted(res.paths, key=lambda p: p.tau))
    # paths are associated across tiles by delay rank
    n_common = min(len(p) for p in per_tile)
    if n_common == 0:
        raise ValueError("no tile produced a usable path")
    points, taus = [], []
    for s in range(n_common):
        rays = [direction(t[s].phi_el, t[s].phi_az) for t in per_tile]
        points.append(triangulate_ls(rays, [tile.center for tile in plan.tiles]))
        taus.append(np.mean([t[s].tau for t in per_tile]))
    delta = ulris_coarse_clock([t[0].tau for t in per_tile], points[0], cfg)
    geo_taus = toas_from_geometry(cfg, points[0], np.array(points[1:]), delta)
    omega1 = -2 * np.pi * geo_taus * cfg.subcarrier_spacing
    rhos = estimate_gains(Y, omega1, np.array(points), W, cfg)
    paths = []
    for p, rho, tau in zip(points, rhos, geo_taus):
        el, az, d = spherical_from_position(p, cfg.p_ris)
        paths.append(PathParams(complex(rho), el, az, d, float(tau)))
    return ChannelParams(paths)


def ulris_estimate(Y, plan: SubRisPlan, cfg: ScenarioConfig, n_paths: int | None = None) -> UlrisEstimate:
    """Separate, estimate per tile, triangulate, then refine and position on the full surface."""
    coarse = ulris_coarse(Y, plan, cfg, n_paths)
    refined = sage_refine(Y, coarse, plan, cfg)
    return UlrisEstimate(locate(refined.params, plan.matrix, cfg), coarse, refined)


__all__ = [
    "SubRisPlan", "UlrisEstimate", "assemble_ul_profile", "make_orthogonal_G", "make_plan",
    "partition_ris", "separate_subris_signal", "tile_indices", "triangulate_ls", "ulris_coarse",
    "ulris_coarse_clock", "ulris_estimate",
]

"""Kronecker-structured RIS profiles, tensor view of the observation and rank-1 CPD."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class KroneckerProfile:
    """RIS profile ``W = T1 kron T2`` with ``T1`` (n_x x T1) and ``T2`` (n_z x T2)."""

    t1: np.ndarray
    t2: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.t1.shape[0] * self.t2.shape[0], self.t1.shape[1] * self.t2.shape[1]

    @property
    def n_t1(self) -> int:
        return self.t1.shape[1]

    @property
    def n_t2(self) -> int:
        return self.t2.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return np.kron(self.t1, self.t2)

    def apply(self, b) -> np.ndarray:
        """``b^T W`` without forming ``W``; ``b`` may be (N_R,) or (k, N_R)."""
        b = np.asarray(b)
        B = b.reshape(b.shape[:-1] + (self.t1.shape[0], self.t2.shape[0]))
        return (self.t1.T @ B @ self.t2).reshape(b.shape[:-1] + (-1,))


def random_phases(shape, rng: np.random.Generator) -> np.ndarray:
    return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, shape))


def build_kronecker_profile(n_x: int, n_z: int, t1: int, t2: int, rng: np.random.Generator) -> KroneckerProfile:
    """Random unit-modulus Kronecker profile."""
    if t1 < 1 or t2 < 1:
        raise ValueError("factor widths must be positive")
    return KroneckerProfile(random_phases((n_x, t1), rng), random_phases((n_z, t2), rng))


def as_matrix(profile) -> np.ndarray:
    """Accept a plain ``N_R x T`` array or any object exposing ``.matrix``."""
    return profile.matrix if hasattr(profile, "matrix") else np.asarray(profile)


def profile_apply(W, b) -> np.ndarray:
    """``b^T W`` for a plain matrix or a structured profile exposing ``apply``."""
    return W.apply(b) if hasattr(W, "apply") else np.asarray(b) @ np.asarray(W)


def tensorize(Y, t1: int, t2: int) -> np.ndarray:
    """Reshape an N x (t1*t2) matrix to an (N, t1, t2) tensor; column ``t1*T2 + t2``."""
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[1] != t1 * t2:
        raise ValueError(f"cannot view {Y.shape} as (N, {t1}, {t2})")
    return Y.reshape(Y.shape[0], t1, t2)


def untensorize(X) -> np.ndarray:
    X = np.asarray(X)
    return X.reshape(X.shape[0], -1)


def outer3(u1, u2, u3) -> np.ndarray:
    return np.einsum("i,j,k->ijk", u1, u2, u3)


@dataclass
class Rank1CPD:
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray
    residual: float
    n_iter: int
    converged: bool
    history: list

    @property
    def factors(self):
        return self.u1, self.u2, self.u3


def _dominant_left(M):
    u, _, _ = np.linalg.svd(M, full_matrices=False)
    return u[:, 0]


def rank1_cpd(X, max_iter: int = 200, tol: float = 1e-8) -> Rank1CPD:
    """Best rank-1 approximation ``X ~ u1 o u2 o u3`` by alternating least squares.

    Each factor update is the exact least-squares solution with the other two
    held fixed, so the residual never increases. Initialised with the dominant
    left singular vectors of the three unfoldings.

    Raises
    ------
    ValueError
        If ``X`` is identically zero.
    """
    X = np.asarray(X, dtype=complex)
    norm_x = np.linalg.norm(X)
    if norm_x == 0.0:
        raise ValueError("cannot decompose a zero tensor")
    n1, n2, n3 = X.shape
    u2 = _dominant_left(X.transpose(1, 0, 2).reshape(n2, -1))
    u3 = _dominant_left(X.transpose(2, 0, 1).reshape(n3, -1))
    u1 = np.einsum("ijk,j,k->i", X, u2.conj(), u3.conj())

    def residual(a, b, c):
        return np.linalg.norm(X - outer3(a, b, c))

    history = [residual(u1, u2, u3)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u2 = np.einsum("ijk,i,k->j", X, u1.conj(), u3.conj()) / (np.vdot(u1, u1).real * np.vdot(u3, u3).real)
        u3 = np.einsum("ijk,i,j->k", X, u1.conj(), u2.conj()) / (np.vdot(u1, u1).real * np.vdot(u2, u2).real)
        u1 = np.einsum("ijk,j,k->i", X, u2.conj(), u3.conj()) / (np.vdot(u2, u2).real * np.vdot(u3, u3).real)
        history.append(residual(u1, u2, u3))
        if abs(history[-2] - history[-1]) <= tol * norm_x:
            converged = True
            break
    if not converged:
        warnings.warn(f"rank-1 CPD did not converge in {max_iter} iterations")
    return Rank1CPD(u1, u2, u3, history[-1], it, converged, history)

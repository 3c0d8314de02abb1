"""Small derivative-free and proximal solvers shared by the estimators."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import NonFiniteObjectiveError

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    n_evals: int
    converged: bool
    history: list = field(default_factory=list)


def nelder_mead(fun: Callable[[np.ndarray], float], x0, step=None, tol: float = 1e-8,
                max_evals: int = 2000, adaptive: bool = False) -> SimplexResult:
    """Minimise ``fun`` with the Nelder-Mead simplex method.

    Parameters
    ----------
    fun : callable
        Objective of a 1-D array.
    x0 : array_like
        Starting point; it is one vertex of the initial simplex.
    step : float or array_like, optional
        Edge length of the initial simplex along each coordinate (default 5% of
        ``|x0|`` with a 2.5e-4 floor).
    tol : float
        Stop once every vertex lies within ``tol`` (infinity norm) of the best.
    max_evals : int
        Evaluation budget.
    adaptive : bool
        Use dimension-dependent coefficients (Gao and Han), helpful above ~5 dims.

    Returns
    -------
    SimplexResult
        Best vertex found. ``history`` holds the best value after every
        iteration and is non-increasing.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.size
    if step is None:
        step = np.where(x0 != 0, 0.05 * np.abs(x0), 2.5e-4)
    step = np.broadcast_to(np.asarray(step, dtype=float), (n,))
    if adaptive:
        alpha, gamma, rho, sigma = 1.0, 1.0 + 2.0 / n, 0.75 - 1.0 / (2.0 * n), 1.0 - 1.0 / n
    else:
        alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5

    n_evals = 0

    def f(x):
        nonlocal n_evals
        n_evals += 1
        v = float(fun(x))
        if not np.isfinite(v):
            raise NonFiniteObjectiveError(f"objective returned {v} at x={x!r}")
        return v

    simplex = np.vstack([x0, x0 + np.diag(step)])
    values = np.array([f(v) for v in simplex])
    history = [values.min()]
    converged = False
    while n_evals < max_evals:
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        if np.max(np.abs(simplex[1:] - simplex[0])) <= tol:
            converged = True
            break
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + alpha * (centroid - worst)
        fr = f(xr)
        if fr < values[0]:
            xe = centroid + gamma * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
        elif fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
        else:
            if fr < values[-1]:
                xc = centroid + rho * (xr - centroid)
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = centroid + rho * (worst - centroid)
                fc = f(xc)
                accept = fc < values[-1]
            if accept:
                simplex[-1], values[-1] = xc, fc
            else:
                simplex[1:] = simplex[0] + sigma * (simplex[1:] - simplex[0])
                values[1:] = [f(v) for v in simplex[1:]]
        history.append(min(history[-1], values.min()))
    best = int(np.argmin(values))
    return SimplexResult(simplex[best].copy(), float(values[best]), n_evals, converged, history)


def nelder_mead_restarts(fun, x0, step, tol: float = 1e-8, max_evals: int = 4000,
                         max_restarts: int = 2, adaptive: bool = False) -> SimplexResult:
    """Re-launch the simplex from the incumbent until a restart stops improving.

    Restarting counters premature collapse of the simplex, a well-known
    weakness of plain Nelder-Mead.
    """
    best = nelder_mead(fun, x0, step, tol, max_evals, adaptive)
    total = best.n_evals
    history = list(best.history)
    for _ in range(max_restarts):
        trial = nelder_mead(fun, best.x, step, tol, max_evals, adaptive)
        total += trial.n_evals
        history.extend(min(h, history[-1]) for h in trial.history)
        if not trial.fun < best.fun:
            break
        best = trial
    best.n_evals = total
    best.history = history
    return best


def golden_section_max(fun: Callable[[float], float], lo: float, hi: float, tol: float = 1e-8,
                       max_iter: int = 200) -> tuple[float, float]:
    """Maximise a unimodal scalar function on ``[lo, hi]``."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    return (c, fc) if fc >= fd else (d, fd)


def soft_threshold(z, t):
    """Complex soft-thresholding, the prox of ``t * ||.||_1``."""
    mag = np.abs(z)
    scale = np.maximum(mag - t, 0.0) / np.where(mag > 0, mag, 1.0)
    return z * scale


@dataclass
class LassoResult:
    x: np.ndarray
    n_iter: int
    converged: bool
    objective: list


def lasso_gram(gram, corr, xi: float, tol: float = 1e-6, max_iter: int = 20000, x0=None) -> LassoResult:
    """Solve ``min 0.5 ||y - D x||^2 + xi ||x||_1`` given ``D^H D`` and ``D^H y``.

    Monotone FISTA (Beck and Teboulle): an accelerated proximal-gradient step
    is only accepted when it does not increase the objective, so the recorded
    objective is non-increasing. Stops when the relative change of ``x`` falls
    below ``tol``.
    """
    gram = np.asarray(gram)
    corr = np.asarray(corr)
    lip = float(np.linalg.eigvalsh(gram).max())
    if lip <= 0:
        return LassoResult(np.zeros_like(corr), 0, True, [0.0])
    step = 1.0 / lip
    x = np.zeros_like(corr) if x0 is None else np.asarray(x0, dtype=complex).copy()

    def objective(v, gv):
        # 0.5 ||y - Dv||^2 up to the constant 0.5 ||y||^2
        return 0.5 * np.vdot(v, gv).real - np.vdot(corr, v).real + xi * np.abs(v).sum()

    # gram @ z follows from gram @ x and gram @ u by linearity, one product per step
    gx = gram @ x
    z, gz = x.copy(), gx.copy()
    t = 1.0
    obj = [objective(x, gx)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u = soft_threshold(z - step * (gz - corr), step * xi)
        gu = gram @ u
        fu = objective(u, gu)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        x_prev, gx_prev = x, gx
        if fu <= obj[-1]:
            x, gx = u, gu
            obj.append(fu)
        else:
            obj.append(obj[-1])
        a, b = t / t_next, (t - 1.0) / t_next
        z = x + a * (u - x) + b * (x - x_prev)
        gz = gx + a * (gu - gx) + b * (gx - gx_prev)
        t = t_next
        scale = max(np.sqrt(np.vdot(x, x).real), 1e-300)
        dx = np.sqrt(np.vdot(x - x_prev, x - x_prev).real)
        if it > 1 and dx <= tol * scale and np.sqrt(np.vdot(u - x, u - x).real) <= tol * scale:
            converged = True
            break
    return LassoResult(x, it, converged, obj)

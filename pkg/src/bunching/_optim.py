"""Damped Newton ascent shared by the likelihood-based estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConvergenceError(RuntimeError):
    """The optimizer stopped before meeting its gradient tolerance."""


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    grad_norm: float
    converged: bool


def fd_hessian(fg, x, rel_step=1e-5):
    """Central-difference Jacobian of an analytic gradient, symmetrized."""
    p = x.size
    H = np.empty((p, p))
    for j in range(p):
        h = rel_step * max(1.0, abs(x[j]))
        e = np.zeros(p)
        e[j] = h
        _, gp = fg(x + e)
        _, gm = fg(x - e)
        H[:, j] = (gp - gm) / (2 * h)
    return 0.5 * (H + H.T)


def maximize(fg, x0, *, hess=None, gtol=1e-8, maxiter=500, raise_on_fail=True):
    """Maximize a smooth function by Newton steps with Armijo backtracking.

    Parameters
    ----------
    fg : callable
        ``x -> (f, grad)``; must return ``f = -inf`` outside the domain.
    x0 : array_like
        Starting point inside the domain.
    hess : callable, optional
        Analytic Hessian; finite differences of ``grad`` otherwise.

    Notes
    -----
    If the Hessian is not negative definite a Levenberg shift is added
    until it is, so every step is an ascent direction.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fg(x)
    if not np.isfinite(f):
        raise ConvergenceError("starting point outside the domain")
    for it in range(maxiter + 1):
        gn = float(np.max(np.abs(g)))
        if gn < gtol:
            return OptimResult(x, f, g, it, gn, True)
        if it == maxiter:
            break
        H = hess(x) if hess is not None else fd_hessian(fg, x)
        A = -H
        lam = 0.0
        scale = max(1e-12, float(np.max(np.abs(np.diag(A)))) if A.size else 1.0)
        while True:
            try:
                L = np.linalg.cholesky(A + lam * np.eye(x.size))
                break
            except np.linalg.LinAlgError:
                lam = scale * 1e-8 if lam == 0 else lam * 10
                if lam > 1e12 * scale:
                    raise ConvergenceError("could not find an ascent direction") from None
        step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        slope = float(g @ step)
        t = 1.0
        accepted = False
        while t > 1e-14:
            xn = x + t * step
            fn, gn_vec = fg(xn)
            if np.isfinite(fn):
                if fn >= f + 1e-4 * t * slope:
                    accepted = True
                    break
                # round-off plateau: take the full step if it lowers the gradient
                if t == 1.0 and fn >= f - 1e-13 * (1 + abs(f)) and np.max(np.abs(gn_vec)) < gn:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            if gn < 1e3 * gtol:
                return OptimResult(x, f, g, it, gn, True)
            break
        x, f, g = xn, fn, gn_vec
    gn = float(np.max(np.abs(g)))
    if raise_on_fail:
        raise ConvergenceError(f"no convergence after {maxiter} iterations (max |grad| = {gn:.3g})")
    return OptimResult(x, f, g, maxiter, gn, False)

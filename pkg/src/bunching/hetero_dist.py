"""Distributions for latent (log) ability and friction errors.

Every distribution exposes ``pdf``, ``cdf``, ``quantile`` and ``sample``.
Sampling is by inversion of uniforms drawn from a keyed Philox stream, so a
``(seed, stream)`` pair always yields the same draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator
from scipy.optimize import nnls

from ._rng import rng_stream

__all__ = [
    "Distribution",
    "Normal",
    "Uniform",
    "SGED",
    "FiniteMixture",
    "Discrete",
    "NormalIndexMixture",
    "CalibrationResult",
    "pdf",
    "cdf",
    "quantile",
    "sample",
    "mixture_marginal",
    "calibrate_index_mixture",
    "distribution_from_dict",
]

_TABLE_SIZE = 4096


def _check_p(p):
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise ValueError("quantile needs probabilities strictly inside (0, 1)")
    return p


class Distribution:
    """Common interface; subclasses supply ``pdf``, ``cdf`` and ``_bounds``."""

    def pdf(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def cdf(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def mean(self) -> float:  # pragma: no cover - abstract
        raise NotImplementedError

    def _bounds(self) -> tuple[float, float]:
        """Interval holding all but a negligible amount of mass."""
        raise NotImplementedError  # pragma: no cover

    def quantile(self, p):
        """Generalized inverse of the CDF.

        A 4096-point CDF table gives a bracket and a monotone cubic first
        guess, which a safeguarded Newton iteration polishes to near
        machine precision.
        """
        p = _check_p(p)
        shape = p.shape
        p = p.ravel()
        lo_b, hi_b = self._bounds()
        grid = np.linspace(lo_b, hi_b, _TABLE_SIZE)
        table = np.maximum.accumulate(self.cdf(grid))
        # brackets from the table, widened outward for the far tails
        j = np.searchsorted(table, p, side="left")
        lo = grid[np.clip(j - 1, 0, _TABLE_SIZE - 1)]
        hi = grid[np.clip(j, 0, _TABLE_SIZE - 1)]
        width = hi_b - lo_b
        left = j == 0
        while np.any(left):
            lo[left] = lo[left] - width
            left = left & (self.cdf(lo) >= p)
        right = j >= _TABLE_SIZE
        hi = np.where(right, grid[-1], hi)
        while np.any(right):
            hi[right] = hi[right] + width
            right = right & (self.cdf(hi) < p)
        keep, first = np.unique(table, return_index=True)
        if keep.size >= 2:
            guess = PchipInterpolator(keep, grid[first], extrapolate=True)(p)
            guess = np.clip(guess, lo, hi)
        else:
            guess = 0.5 * (lo + hi)
        return _refine_inverse(self.cdf, self.pdf, p, lo, hi, guess).reshape(shape)

    def sample(self, n: int, seed: int = 0, stream: int = 0) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be nonnegative")
        u = rng_stream(seed, stream).random(n)
        # avoid p = 0 exactly (probability ~2^-53 per draw)
        u = np.where(u == 0.0, np.finfo(float).tiny, u)
        return self.quantile(u)


def _refine_inverse(cdf, pdf, p, lo, hi, x0, tol=1e-13, maxiter=100):
    """Bracketed Newton iteration on cdf(x) = p, vectorized over ``p``.

    Steps leaving the current bracket (or hitting a zero density) fall back
    to bisection, so the bracket always shrinks toward the generalized
    inverse.
    """
    lo, hi = lo.astype(float).copy(), hi.astype(float).copy()
    x = x0.astype(float).copy()
    scale = np.maximum(1.0, np.abs(hi - lo))
    fx = cdf(x) - p
    for _ in range(maxiter):
        below = fx < 0
        lo = np.where(below, x, lo)
        hi = np.where(below, hi, x)
        done = (np.abs(fx) <= 4 * np.finfo(float).eps) | (hi - lo <= tol * scale)
        if np.all(done):
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - fx / pdf(x)
        mid = 0.5 * (lo + hi)
        ok = np.isfinite(step) & (step > lo) & (step < hi)
        x = np.where(done, x, np.where(ok, step, mid))
        fx = cdf(x) - p
    return np.where(np.abs(fx) <= 4 * np.finfo(float).eps, x, hi)


@dataclass(frozen=True)
class Normal(Distribution):
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2 * math.pi))

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def quantile(self, p):
        return self.mu + self.sigma * special.ndtri(_check_p(p))

    def mean(self):
        return self.mu

    def _bounds(self):
        return self.mu - 9 * self.sigma, self.mu + 9 * self.sigma

    def to_dict(self):
        return {"kind": "normal", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Uniform(Distribution):
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("need b > a")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def quantile(self, p):
        return self.a + (self.b - self.a) * _check_p(p)

    def mean(self):
        return 0.5 * (self.a + self.b)

    def _bounds(self):
        return self.a, self.b

    def to_dict(self):
        return {"kind": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class SGED(Distribution):
    """Skewed generalized error distribution with mean ``mu`` and sd ``sigma``.

    ``k`` controls the tails (2 is normal, 1 is Laplace) and ``lam`` in
    (-1, 1) the skew; negative values put the long tail on the left.

    The density is ``C/sigma * exp(-(|z| / ((1 + sign(z) lam) theta sigma))**k)``
    with ``z = x - mu + delta sigma`` the distance from the mode.  The
    constants ``C``, ``theta`` and ``delta`` make ``mu`` and ``sigma`` the
    mean and standard deviation.
    """

    mu: float = 0.0
    sigma: float = 1.0
    k: float = 2.0
    lam: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not -1 < self.lam < 1:
            raise ValueError("lambda must lie in (-1, 1)")

    @property
    def _consts(self):
        k, lam = self.k, self.lam
        g1, g2, g3 = (special.gamma(m / k) for m in (1, 2, 3))
        a = g2 / math.sqrt(g1 * g3)
        s_lam = math.sqrt(1 + 3 * lam**2 - 4 * a**2 * lam**2)
        theta = math.sqrt(g1 / g3) / s_lam
        delta = 2 * lam * a / s_lam
        c = k / (2 * theta * g1)
        return c, theta, delta

    def _scales(self):
        _, theta, delta = self._consts
        mode = self.mu - delta * self.sigma
        return mode, (1 - self.lam) * theta * self.sigma, (1 + self.lam) * theta * self.sigma

    def pdf(self, x):
        c, _, _ = self._consts
        mode, b_left, b_right = self._scales()
        z = np.asarray(x, dtype=float) - mode
        b = np.where(z < 0, b_left, b_right)
        return c / self.sigma * np.exp(-((np.abs(z) / b) ** self.k))

    def cdf(self, x):
        mode, b_left, b_right = self._scales()
        z = np.asarray(x, dtype=float) - mode
        ik = 1.0 / self.k
        w_left = 0.5 * (1 - self.lam)
        below = w_left * special.gammaincc(ik, (np.abs(z) / b_left) ** self.k)
        above = w_left + 0.5 * (1 + self.lam) * special.gammainc(ik, (np.abs(z) / b_right) ** self.k)
        return np.where(z < 0, below, above)

    def quantile(self, p):
        p = _check_p(p)
        mode, b_left, b_right = self._scales()
        ik = 1.0 / self.k
        w_left = 0.5 * (1 - self.lam)
        left = p < w_left
        out = np.empty_like(p)
        # the inverse incomplete gamma is slow, so evaluate each branch only where needed
        out[left] = mode - b_left * special.gammainccinv(ik, p[left] / w_left) ** ik
        out[~left] = mode + b_right * special.gammaincinv(ik, (p[~left] - w_left) / (1 - w_left)) ** ik
        return out

    def mean(self):
        return self.mu

    def _bounds(self):
        return self.quantile(1e-12), self.quantile(1 - 1e-12)

    def to_dict(self):
        return {"kind": "sged", "mu": self.mu, "sigma": self.sigma, "k": self.k, "lambda": self.lam}


class FiniteMixture(Distribution):
    """Weighted mixture of component distributions."""

    def __init__(self, weights: Sequence[float], components: Sequence[Distribution]):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or len(w) != len(components) or len(w) == 0:
            raise ValueError("need one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        self.weights = w
        self.components = tuple(components)

    def pdf(self, x):
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self.components))

    def cdf(self, x):
        return sum(w * c.cdf(x) for w, c in zip(self.weights, self.components))

    def mean(self):
        return float(sum(w * c.mean() for w, c in zip(self.weights, self.components)))

    def _bounds(self):
        b = np.array([c._bounds() for c in self.components])
        return float(b[:, 0].min()), float(b[:, 1].max())

    def to_dict(self):
        return {
            "kind": "finite_mixture",
            "weights": self.weights.tolist(),
            "components": [c.to_dict() for c in self.components],
        }

    def __repr__(self):
        return f"FiniteMixture(weights={self.weights.tolist()}, components={list(self.components)})"


class Discrete(Distribution):
    """Finite-support distribution; ``pdf`` returns point masses."""

    def __init__(self, points: Sequence[float], masses: Sequence[float]):
        x = np.asarray(points, dtype=float)
        m = np.asarray(masses, dtype=float)
        if x.ndim != 1 or x.shape != m.shape or x.size == 0:
            raise ValueError("points and masses must be nonempty 1-d arrays of equal length")
        if np.any(m < 0) or abs(m.sum() - 1) > 1e-10:
            raise ValueError("masses must be nonnegative and sum to 1")
        order = np.argsort(x, kind="stable")
        x, m = x[order], m[order]
        ux, inv = np.unique(x, return_inverse=True)
        self.points = ux
        self.masses = np.bincount(inv, weights=m) / m.sum()
        self._cum = np.minimum(np.cumsum(self.masses), 1.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        j = np.searchsorted(self.points, x)
        j_c = np.clip(j, 0, len(self.points) - 1)
        return np.where(self.points[j_c] == x, self.masses[j_c], 0.0)

    def cdf(self, x):
        j = np.searchsorted(self.points, np.asarray(x, dtype=float), side="right")
        return np.where(j > 0, self._cum[np.maximum(j - 1, 0)], 0.0)

    def quantile(self, p):
        p = _check_p(p)
        j = np.searchsorted(self._cum, p, side="left")
        return self.points[np.minimum(j, len(self.points) - 1)]

    def mean(self):
        return float(self.masses @ self.points)

    def _bounds(self):
        return float(self.points[0]), float(self.points[-1])

    def to_dict(self):
        return {"kind": "discrete", "points": self.points.tolist(), "masses": self.masses.tolist()}

    def __repr__(self):
        return f"Discrete(n_points={len(self.points)})"


class NormalIndexMixture(Distribution):
    """CDF ``n -> sum_x w_x Phi((n - x b) / s)``: normal noise around a discrete index."""

    def __init__(self, index: Sequence[float], weights: Sequence[float], s: float):
        v = np.asarray(index, dtype=float)
        w = np.asarray(weights, dtype=float)
        if v.size == 0:
            raise ValueError("empty support")
        if not s > 0:
            raise ValueError("s must be positive")
        if v.shape != w.shape or np.any(w < 0) or abs(w.sum() - 1) > 1e-10:
            raise ValueError("weights must be nonnegative, sum to 1 and match the index")
        keep = w > 0
        self.index, self.weights, self.s = v[keep], w[keep] / w[keep].sum(), float(s)

    def _chunked(self, fun, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.empty_like(flat)
        step = max(1, 2_000_000 // max(1, self.index.size))
        for i in range(0, flat.size, step):
            z = (flat[i : i + step, None] - self.index[None, :]) / self.s
            out[i : i + step] = fun(z) @ self.weights
        return out.reshape(x.shape)

    def pdf(self, x):
        return self._chunked(lambda z: np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi), x) / self.s

    def cdf(self, x):
        return self._chunked(special.ndtr, x)

    def mean(self):
        return float(self.weights @ self.index)

    def _bounds(self):
        return float(self.index.min() - 9 * self.s), float(self.index.max() + 9 * self.s)

    def to_dict(self):
        return {
            "kind": "normal_index_mixture",
            "index": self.index.tolist(),
            "weights": self.weights.tolist(),
            "s": self.s,
        }

    def __repr__(self):
        return f"NormalIndexMixture(n_points={self.index.size}, s={self.s})"


def distribution_from_dict(doc: dict) -> Distribution:
    """Inverse of ``to_dict`` for every distribution kind."""
    kind = doc.get("kind")
    if kind == "normal":
        return Normal(doc["mu"], doc["sigma"])
    if kind == "uniform":
        return Uniform(doc["a"], doc["b"])
    if kind == "sged":
        return SGED(doc["mu"], doc["sigma"], doc["k"], doc["lambda"])
    if kind == "finite_mixture":
        return FiniteMixture(doc["weights"], [distribution_from_dict(c) for c in doc["components"]])
    if kind == "discrete":
        return Discrete(doc["points"], doc["masses"])
    if kind == "normal_index_mixture":
        return NormalIndexMixture(doc["index"], doc["weights"], doc["s"])
    raise ValueError(f"unknown distribution kind {kind!r}")


# functional interface -------------------------------------------------------


def pdf(dist: Distribution, x):
    return dist.pdf(x)


def cdf(dist: Distribution, x):
    return dist.cdf(x)


def quantile(dist: Distribution, p):
    return dist.quantile(p)


def sample(dist: Distribution, n: int, seed: int = 0, stream: int = 0):
    return dist.sample(n, seed, stream)


def mixture_marginal(f_x: Discrete, b: float | Sequence[float], s: float) -> NormalIndexMixture:
    """Marginal of ``x b + s Z`` when ``x ~ f_x`` and ``Z`` is standard normal.

    ``f_x`` holds scalar support points; ``b`` multiplies them.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if b.size != 1:
        raise ValueError("mixture_marginal takes a scalar index coefficient")
    return NormalIndexMixture(f_x.points * b[0], f_x.masses, s)


@dataclass(frozen=True)
class CalibrationResult:
    """Output of :func:`calibrate_index_mixture`."""

    f_x: Discrete
    mixture: NormalIndexMixture
    sup_error: float
    eval_grid: np.ndarray


def calibrate_index_mixture(target: Distribution, s: float, grid, *, n_eval: int = 2000, tol: float | None = None):
    """Fit weights on candidate points so that the normal index mixture matches a target CDF.

    Weights solve a nonnegative least-squares problem on ``n_eval``
    equally spaced CDF evaluation points; the sum-to-one constraint enters
    as a heavily weighted extra row and is then imposed exactly.

    Parameters
    ----------
    target : Distribution
        Distribution to reproduce.
    s : float
        Common normal scale of the mixture components.
    grid : int or array_like
        Candidate support points, or a count of equally spaced points
        placed between the target's 0.5% and 99.5% quantiles.
    n_eval : int
        Size of the CDF evaluation grid.
    tol : float, optional
        If given, raise ``ValueError`` when the achieved sup-error exceeds it.

    Returns
    -------
    CalibrationResult
    """
    if not s > 0:
        raise ValueError("s must be positive")
    lo_q, hi_q = float(target.quantile(1e-6)), float(target.quantile(1 - 1e-6))
    if np.isscalar(grid):
        g = int(grid)
        a, b = float(target.quantile(0.005)), float(target.quantile(0.995))
        points = np.linspace(a, b, g) if g > 1 else np.array([float(target.quantile(0.5))])
    else:
        points = np.unique(np.asarray(grid, dtype=float))
    if points.size == 0:
        raise ValueError("empty calibration grid")
    v = np.linspace(min(lo_q, points.min()) - 4 * s, max(hi_q, points.max()) + 4 * s, n_eval)
    design = special.ndtr((v[:, None] - points[None, :]) / s)
    rhs = target.cdf(v)
    penalty = 100.0 * math.sqrt(n_eval)
    w, _ = nnls(np.vstack([design, penalty * np.ones(points.size)]), np.append(rhs, penalty), maxiter=50 * points.size)
    if w.sum() <= 0:
        raise ValueError("calibration failed: all weights zero")
    w = np.where(w > 1e-12 * w.sum(), w, 0.0)
    w = w / w.sum()
    sup_error = float(np.max(np.abs(design @ w - rhs)))
    if tol is not None and sup_error > tol:
        raise ValueError(f"calibration sup-error {sup_error:.4g} exceeds tolerance {tol:.4g}")
    keep = w > 0
    f_x = Discrete(points[keep], w[keep] / w[keep].sum())
    return CalibrationResult(f_x, NormalIndexMixture(f_x.points, f_x.masses, s), sup_error, v)

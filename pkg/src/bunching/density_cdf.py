"""Histograms, side limits of the income density, bunching mass and friction filters.

Functions accept either a :class:`~bunching.simulator.Sample` or a plain
array of (log) incomes with optional weights.  Filters take observed
incomes, remove the spread of bunchers caused by optimization frictions,
and return transformed incomes with the bunchers placed exactly at the
cutoff.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ATOM_TOL",
    "Histogram",
    "SideLimits",
    "FilterResult",
    "FilterError",
    "histogram",
    "side_limits",
    "max_slope_m1",
    "bunching_mass_hat",
    "polynomial_cdf_filter",
    "saez_filter",
]

ATOM_TOL = 1e-9


class FilterError(ValueError):
    """Invalid window or data for a filter."""


def _values(data, weights=None, which="y"):
    """Pull incomes and weights from a Sample or an array."""
    if hasattr(data, "y"):
        y = np.asarray(getattr(data, which), dtype=float)
        w = data.weights if weights is None else weights
    else:
        y = np.asarray(data, dtype=float).ravel()
        w = weights
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float).ravel()
    if w.shape != y.shape:
        raise ValueError("weights must match the data")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    keep = w > 0
    return y[keep], w[keep]


def _k_of(data, k):
    if k is not None:
        return float(k)
    if hasattr(data, "k"):
        return float(data.k)
    raise ValueError("k is required for array input")


# ---------------------------------------------------------------------------
# histogram


@dataclass
class Histogram:
    """Weighted density histogram with uniform bins.

    When built with ``align_at_k``, ``k`` is a bin edge and observations
    at ``k`` are held in ``atom`` instead of a bin, so
    ``heights.sum() * binwidth + atom == 1``.
    """

    edges: np.ndarray
    heights: np.ndarray
    counts: np.ndarray
    total_weight: float
    atom: float = 0.0
    k: float | None = None
    n_eff: float = math.nan

    @property
    def binwidth(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("left,right,height\n")
            for a, b, h in zip(self.edges[:-1], self.edges[1:], self.heights):
                fh.write(f"{a:.17g},{b:.17g},{h:.17g}\n")


def histogram(data, binwidth, *, align_at_k=False, k=None, weights=None, tol=ATOM_TOL) -> Histogram:
    """Density histogram of ``data`` with bins of width ``binwidth``.

    Parameters
    ----------
    data : Sample or array_like
    binwidth : float
    align_at_k : bool
        Put a bin edge at ``k`` and keep the mass at ``k`` as a separate atom.
    k : float, optional
        Required with ``align_at_k`` for array input.
    """
    if not binwidth > 0:
        raise ValueError("binwidth must be positive")
    y, w = _values(data, weights)
    if y.size == 0:
        raise ValueError("empty sample")
    total = float(w.sum())
    n_eff = total**2 / float(w @ w)
    atom = 0.0
    kk = None
    if align_at_k:
        kk = _k_of(data, k)
        at_k = np.abs(y - kk) <= tol
        atom = float(w[at_k].sum()) / total
        y, w = y[~at_k], w[~at_k]
        lo_i = math.floor((y.min() - kk) / binwidth) if y.size else -1
        hi_i = math.floor((y.max() - kk) / binwidth) + 1 if y.size else 1
        lo_i, hi_i = min(lo_i, -1), max(hi_i, 1)
        edges = kk + binwidth * np.arange(lo_i, hi_i + 1)
    else:
        lo = float(y.min())
        nb = max(1, math.ceil((float(y.max()) - lo) / binwidth))
        edges = lo + binwidth * np.arange(nb + 1)
        if edges[-1] < y.max():
            edges = np.append(edges, edges[-1] + binwidth)
    counts, _ = np.histogram(y, bins=edges, weights=w)
    heights = counts / (total * binwidth)
    return Histogram(edges, heights, counts, total, atom, kk, n_eff)


# ---------------------------------------------------------------------------
# side limits


@dataclass
class SideLimits:
    """Boundary values of the continuous density at ``k`` with standard errors.

    Unpacks as ``f_minus, f_plus``.
    """

    f_minus: float
    f_plus: float
    se_minus: float
    se_plus: float
    binwidth: float
    bandwidth: float

    def __iter__(self):
        yield self.f_minus
        yield self.f_plus


def _default_binwidth(y):
    q75, q25 = np.percentile(y, [75, 25])
    iqr = q75 - q25
    if iqr <= 0:
        iqr = float(np.std(y)) or 1.0
    return 2.0 * iqr * y.size ** (-1.0 / 3.0)


def _boundary_fit(x, h, k, bandwidth, var_scale):
    """Triangular-kernel local-linear intercept at ``k`` and its standard error."""
    u = np.abs(x - k) / bandwidth
    kw = np.clip(1.0 - u, 0.0, None)
    use = kw > 0
    if use.sum() < 2:
        raise ValueError("fewer than 2 bins inside the bandwidth on one side")
    Z = np.column_stack([np.ones(use.sum()), x[use] - k])
    W = kw[use]
    A = Z.T @ (W[:, None] * Z)
    if np.linalg.matrix_rank(A) < 2:
        raise ValueError("fewer than 2 distinct bins on one side")
    # intercept = e1' A^{-1} Z' W h, a linear combination of the heights
    coef_row = np.linalg.solve(A, np.array([1.0, 0.0])) @ (Z.T * W)
    est = float(coef_row @ h[use])
    var = float((coef_row**2) @ np.clip(h[use], 0, None)) * var_scale
    return max(est, 0.0), math.sqrt(var)


def side_limits(data, k=None, bandwidth=None, *, binwidth=None, weights=None, tol=ATOM_TOL) -> SideLimits:
    """Local-linear estimates of the income density just below and above ``k``.

    Observations at ``k`` are dropped; heights are still normalized by the
    total weight, so the limits refer to the continuous part of the law.

    Parameters
    ----------
    bandwidth : float, optional
        Half-width of the fit on each side.  Defaults to 20 bins.
    binwidth : float, optional
        Defaults to the Freedman-Diaconis width of the non-bunchers.
    """
    kk = _k_of(data, k)
    y, w = _values(data, weights)
    if binwidth is None:
        binwidth = _default_binwidth(y[np.abs(y - kk) > tol])
    if bandwidth is None:
        bandwidth = 20 * binwidth
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    hist = histogram(y, binwidth, align_at_k=True, k=kk, weights=w, tol=tol)
    c = hist.centers
    # Poisson approximation: var(height) = height / (n_eff * binwidth)
    scale = 1.0 / (hist.n_eff * binwidth)
    below, above = c < kk, c > kk
    f_minus, se_minus = _boundary_fit(c[below], hist.heights[below], kk, bandwidth, scale)
    f_plus, se_plus = _boundary_fit(c[above], hist.heights[above], kk, bandwidth, scale)
    return SideLimits(f_minus, f_plus, se_minus, se_plus, float(binwidth), float(bandwidth))


def max_slope_m1(hist: Histogram, exclude=0.0) -> float:
    """Largest absolute slope between consecutive occupied bins.

    Pairs with a bin overlapping ``(k - exclude, k + exclude)`` are skipped,
    and so is the pair straddling ``k`` of a histogram aligned at ``k``.
    """
    h, e = hist.heights, hist.edges
    occupied = hist.counts > 0
    ok = occupied[:-1] & occupied[1:]
    if hist.k is not None:
        k = hist.k
        left_edge, right_edge = e[:-1], e[1:]
        clear = (right_edge <= k - exclude) | (left_edge >= k + exclude)
        ok &= clear[:-1] & clear[1:]
        ok &= ~np.isclose(e[1:-1], k)
    if ok.sum() < 1:
        raise ValueError("need at least 2 occupied consecutive bins outside the excluded window")
    return float(np.max(np.abs(np.diff(h))[ok]) / hist.binwidth)


def bunching_mass_hat(data, k=None, *, weights=None, tol=ATOM_TOL) -> float:
    """Weighted share of observations within ``tol`` of ``k``."""
    kk = _k_of(data, k)
    y, w = _values(data, weights)
    if y.size == 0:
        return 0.0
    return float(w[np.abs(y - kk) <= tol].sum() / w.sum())


# ---------------------------------------------------------------------------
# filters


@dataclass
class FilterResult:
    """Output of a friction filter.

    ``grid``/``cdf`` tabulate the fitted CDF of frictionless income, which is
    right-continuous with a jump of ``B_hat`` at ``k``.  ``y_filtered``
    follows the order of the input observations.
    """

    method: str
    B_hat: float
    k: float
    grid: np.ndarray
    cdf: np.ndarray
    cdf_left_at_k: float
    y_filtered: np.ndarray
    B_se: float = math.nan
    window: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def cdf_hat(self, x):
        """Fitted CDF at ``x`` (linear between grid points)."""
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.grid, self.cdf, left=0.0, right=1.0)
        below = x < self.k
        if np.any(below):
            g = self.grid < self.k
            out = np.where(below, np.interp(x, self.grid[g], self.cdf[g], left=0.0, right=self.cdf_left_at_k), out)
        return out

    def apply(self, sample):
        """Copy of ``sample`` whose ``y`` holds the filtered incomes."""
        return sample.replace(y=self.y_filtered.copy())

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "method": self.method,
            "B_hat": self.B_hat,
            "B_se": None if math.isnan(self.B_se) else self.B_se,
            "k": self.k,
            "window": self.window,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("grid,cdf_hat\n")
            for g, c in zip(self.grid, self.cdf):
                fh.write(f"{g:.17g},{c:.17g}\n")


def _midrank_cdf(y, w):
    """Empirical CDF at each observation, counting half of its own (tied) weight."""
    order = np.argsort(y, kind="stable")
    ys, ws = y[order], w[order]
    total = ws.sum()
    cum = np.cumsum(ws)
    # ties share the value of their group
    uniq, start = np.unique(ys, return_index=True)
    end = np.append(start[1:], ys.size) - 1
    grp_hi = cum[end]
    grp_lo = np.where(start > 0, cum[start - 1], 0.0)
    mid = 0.5 * (grp_hi + grp_lo) / total
    idx = np.searchsorted(uniq, ys)
    out = np.empty_like(y)
    out[order] = mid[idx]
    return out


def _ecdf(y, w):
    order = np.argsort(y, kind="stable")
    ys, cw = y[order], np.cumsum(w[order]) / w.sum()

    def F(x, left=False):
        j = np.searchsorted(ys, x, side="left" if left else "right")
        return np.where(j > 0, cw[np.maximum(j - 1, 0)], 0.0)

    return F


def _invert_window(p, grid, cont, B, k, c_minus):
    """Inverse of ``cont(v) + B 1{v >= k}`` on the grid, with the atom mapped to ``k``."""
    out = np.empty_like(p)
    left = grid < k
    at = (p >= c_minus) & (p <= c_minus + B)
    lo_mask = p < c_minus
    hi_mask = p > c_minus + B
    gl = np.append(grid[left], k)
    cl = np.append(cont[left], c_minus)
    out[lo_mask] = np.interp(p[lo_mask], cl, gl)
    gr = np.concatenate([[k], grid[~left]])
    cr = np.concatenate([[c_minus], cont[~left]]) + B
    out[hi_mask] = np.interp(p[hi_mask], cr, gr)
    out[at] = k
    return out


def polynomial_cdf_filter(
    data, k=None, delta_minus=0.0, delta_plus=0.0, l=None, u=None, p=7, *, weights=None, n_grid=512
) -> FilterResult:
    """Filter frictions by fitting a polynomial with a jump to the empirical CDF.

    The empirical CDF of observed income is evaluated on ``n_grid`` equally
    spaced points of ``[k - l, k + u]``; points in
    ``[k - delta_minus, k + delta_plus]`` are dropped and the rest are
    regressed on ``1, v, ..., v**p`` and ``1{v >= k}``.  The coefficient on
    the indicator is the bunching mass.  Within ``[k - l, k + u]`` each
    observation is moved to the point where the fitted CDF equals its
    empirical CDF; outside it is left alone.

    Parameters
    ----------
    data : Sample or array_like
        Observed incomes (``Sample.y_tilde`` for samples).
    delta_minus, delta_plus : float
        Extent of the excluded window below and above ``k``.
    l, u : float
        Extent of the fit window; must strictly contain the excluded one.
    p : int
        Polynomial order.
    """
    kk = _k_of(data, k)
    y, w = _values(data, weights, which="y_tilde")
    if l is None or u is None:
        raise FilterError("give the fit window extents l and u")
    if p < 1:
        raise FilterError("polynomial order must be at least 1")
    if delta_minus < 0 or delta_plus < 0 or not (delta_minus < l and delta_plus < u):
        raise FilterError("the excluded window must lie strictly inside the fit window")
    grid = np.linspace(kk - l, kk + u, n_grid)
    F = _ecdf(y, w)
    Fg = F(grid)
    fit_pts = (grid < kk - delta_minus) | (grid > kk + delta_plus)
    scale = max(l, u)
    v = (grid - kk) / scale
    V = np.vander(v, p + 1, increasing=True)
    D = (grid >= kk).astype(float)
    Z = np.column_stack([V, D])
    Zf = Z[fit_pts]
    if fit_pts.sum() <= Z.shape[1] or np.linalg.matrix_rank(Zf) < Z.shape[1]:
        raise FilterError("too few points outside the excluded window for this polynomial order")
    coef, *_ = np.linalg.lstsq(Zf, Fg[fit_pts], rcond=None)
    # the jump is linear in the empirical CDF at the fit points; its variance
    # follows from Cov(F_n(a), F_n(b)) = (F(min(a, b)) - F(a) F(b)) / n
    c = np.linalg.pinv(Zf)[-1]
    Ff = Fg[fit_pts]
    cov_F = np.minimum.outer(Ff, Ff) - np.outer(Ff, Ff)
    jump_raw = float(coef[-1])
    B = min(max(jump_raw, 0.0), 1.0)
    cont = np.sort(V @ coef[:-1])  # monotone rearrangement of the continuous part
    c_minus = float(np.interp(kk, grid, cont))
    cdf = np.clip(cont + B * D, 0.0, 1.0)
    cdf = np.maximum.accumulate(cdf)

    n_eff = w.sum() ** 2 / (w @ w)
    y_f = y.copy()
    inside = (y >= kk - l) & (y <= kk + u)
    if hasattr(data, "y"):
        y_full, w_full = np.asarray(data.y_tilde, float), (data.weights if weights is None else np.asarray(weights))
    else:
        y_full = np.asarray(data, float).ravel()
        w_full = np.ones_like(y_full) if weights is None else np.asarray(weights, float)
    pr = _midrank_cdf(y, w)
    y_f[inside] = _invert_window(pr[inside], grid, cont, B, kk, c_minus)
    # put filtered values back in the input order (zero-weight rows are untouched)
    out = y_full.copy()
    out[w_full > 0] = y_f
    return FilterResult(
        method="polynomial",
        B_hat=B,
        k=kk,
        grid=grid,
        cdf=cdf,
        cdf_left_at_k=min(max(c_minus, 0.0), 1.0),
        y_filtered=out,
        B_se=math.sqrt(max(float(c @ cov_F @ c), 0.0) / n_eff),
        window={"delta_minus": delta_minus, "delta_plus": delta_plus, "l": l, "u": u},
        diagnostics={
            "order": p,
            "coefficients": coef[:-1].tolist(),
            "jump_unclamped": jump_raw,
            "scale": scale,
            "n_fit_points": int(fit_pts.sum()),
        },
    )


def saez_filter(data, K=None, delta=1500.0, binwidth=None, *, weights=None) -> FilterResult:
    """Flat-density friction filter on level incomes.

    The density inside ``[K - delta, K + delta]`` is replaced by the mean
    density ``f_bar`` over the two bands ``[K - 2 delta, K - delta]`` and
    ``[K + delta, K + 2 delta]``; the excess mass in the window is the
    bunching mass.  ``binwidth`` only sets the histogram reported in the
    diagnostics (default ``delta / 10``).
    """
    KK = _k_of(data, K)
    y, w = _values(data, weights, which="y_tilde")
    if not delta > 0:
        raise FilterError("delta must be positive")
    if y.min() > KK - 2 * delta or y.max() < KK + 2 * delta:
        raise FilterError("the averaging bands must lie within the data range")
    total = w.sum()
    lo_band = (y >= KK - 2 * delta) & (y < KK - delta)
    hi_band = (y > KK + delta) & (y <= KK + 2 * delta)
    if not lo_band.any() or not hi_band.any():
        raise FilterError("an averaging band is empty")
    f_bar = float(w[lo_band].sum() + w[hi_band].sum()) / total / (2 * delta)
    in_win = (y >= KK - delta) & (y <= KK + delta)
    window_mass = float(w[in_win].sum()) / total
    B_raw = window_mass - 2 * delta * f_bar
    B = min(max(B_raw, 0.0), 1.0)

    F = _ecdf(y, w)
    F_lo = float(F(np.array([KK - delta]), left=True)[0])
    grid = np.linspace(KK - delta, KK + delta, 513)
    cont = F_lo + f_bar * (grid - (KK - delta))
    cdf = np.clip(cont + B * (grid >= KK), 0.0, 1.0)
    c_minus = F_lo + f_bar * delta

    y_f = y.copy()
    pr = _midrank_cdf(y, w)
    y_f[in_win] = np.clip(_invert_window(pr[in_win], grid, cont, B, KK, c_minus), KK - delta, KK + delta)
    if hasattr(data, "y"):
        y_full = np.asarray(data.y_tilde, float)
        w_full = data.weights if weights is None else np.asarray(weights)
    else:
        y_full = np.asarray(data, float).ravel()
        w_full = np.ones_like(y_full) if weights is None else np.asarray(weights, float)
    out = y_full.copy()
    out[w_full > 0] = y_f
    hist = histogram(y, delta / 10 if binwidth is None else binwidth, weights=w)
    n_eff = total**2 / (w @ w)
    return FilterResult(
        method="saez",
        B_hat=B,
        k=KK,
        grid=grid,
        cdf=cdf,
        cdf_left_at_k=min(max(c_minus, 0.0), 1.0),
        y_filtered=out,
        B_se=math.sqrt(B * (1 - B) / n_eff),
        window={"delta": delta},
        diagnostics={
            "f_bar": f_bar,
            "window_mass": window_mass,
            "B_unclamped": B_raw,
            "hist_binwidth": hist.binwidth,
        },
    )

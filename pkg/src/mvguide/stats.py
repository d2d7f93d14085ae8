"""Chi-squared independence tests and the lowess smoother."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaincc

P_FLOOR = 1e-300


class DegenerateTable(ValueError):
    """Fewer than two nonzero rows or columns: the table carries no information."""


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray
    row_labels: tuple = ()
    col_labels: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise ValueError("counts must be a nonempty 2-d array")
        if (c < 0).any():
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", c)


def chisq_statistic(table: ContingencyTable | np.ndarray) -> tuple[float, int]:
    """Pearson statistic and degrees of freedom after dropping empty rows/columns."""
    counts = table.counts if isinstance(table, ContingencyTable) else np.asarray(table)
    counts = np.asarray(counts, dtype=float)
    counts = counts[counts.sum(axis=1) > 0][:, counts.sum(axis=0) > 0]
    r, c = counts.shape
    if r < 2 or c < 2:
        raise DegenerateTable(f"reduced table is {r}x{c}")
    total = counts.sum()
    expected = np.outer(counts.sum(axis=1), counts.sum(axis=0)) / total
    stat = float(((counts - expected) ** 2 / expected).sum())
    return stat, (r - 1) * (c - 1)


def chisq_pvalue(stat: float, df: int) -> float:
    """Upper-tail chi-squared probability, floored at 1e-300."""
    if df < 1:
        raise ValueError("df must be a positive integer")
    if not math.isfinite(stat):
        raise ValueError("stat must be finite")
    if stat <= 0:
        return 1.0
    return max(float(gammaincc(0.5 * df, 0.5 * stat)), P_FLOOR)


def chisq_test(table: ContingencyTable | np.ndarray) -> float:
    """p-value of the independence test; degenerate tables give 1."""
    try:
        stat, df = chisq_statistic(table)
    except DegenerateTable:
        return 1.0
    return chisq_pvalue(stat, df)


def table_pvalue(rows: np.ndarray, cols: np.ndarray) -> float:
    """Cross-tabulate two nonnegative integer label vectors and test independence."""
    if rows.size == 0:
        return 1.0
    nr = int(rows.max()) + 1
    nc = int(cols.max()) + 1
    counts = np.bincount(rows * nc + cols, minlength=nr * nc).reshape(nr, nc)
    return chisq_test(counts)


def batch_table_pvalues(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """p-values for many tables sharing one column labelling.

    ``rows`` is (tables, n) of nonnegative row labels; ``cols`` is (n,).
    Empty rows and columns are dropped per table, exactly as in
    :func:`chisq_test`.
    """
    rows = np.asarray(rows, dtype=np.int64)
    t, n = rows.shape
    if n == 0 or t == 0:
        return np.ones(t)
    nr = int(rows.max()) + 1
    nc = int(cols.max()) + 1
    flat = (np.arange(t)[:, None] * nr + rows) * nc + cols[None, :]
    counts = np.bincount(flat.ravel(), minlength=t * nr * nc).reshape(t, nr, nc).astype(float)
    rs = counts.sum(axis=2)
    cs = counts.sum(axis=1)
    expected = rs[:, :, None] * cs[:, None, :] / n
    with np.errstate(invalid="ignore", divide="ignore"):
        terms = np.where(expected > 0, (counts - expected) ** 2 / expected, 0.0)
    stat = terms.sum(axis=(1, 2))
    df = ((rs > 0).sum(axis=1) - 1) * ((cs > 0).sum(axis=1) - 1)
    out = np.ones(t)
    ok = (df >= 1) & (stat > 0)
    out[ok] = np.maximum(gammaincc(0.5 * df[ok], 0.5 * stat[ok]), P_FLOOR)
    return out


# ---------------------------------------------------------------------------
# Lowess
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Curve:
    """Piecewise-linear curve through knots ``(u, s)`` with flat extrapolation."""

    u: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if u.ndim != 1 or u.shape != s.shape or u.size < 1:
            raise ValueError("curve needs matching 1-d knot arrays")
        if u.size > 1 and not np.all(np.diff(u) > 0):
            raise ValueError("knot times must be strictly increasing")
        if not (np.isfinite(u).all() and np.isfinite(s).all()):
            raise ValueError("knots must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "s", s)

    @property
    def knots(self) -> list[tuple[float, float]]:
        return list(zip(self.u.tolist(), self.s.tolist()))

    def __call__(self, u):
        return curve_eval(self, u)


def curve_eval(curve: Curve, u):
    """Linear interpolation between knots, constant beyond the end knots."""
    out = np.interp(u, curve.u, curve.s)
    return float(out) if np.ndim(out) == 0 else out


def _tricube(t: np.ndarray) -> np.ndarray:
    t = np.minimum(np.abs(t), 1.0)
    return (1.0 - t**3) ** 3


def _bisquare(t: np.ndarray) -> np.ndarray:
    t = np.minimum(np.abs(t), 1.0)
    return (1.0 - t**2) ** 2


def lowess(
    u: Sequence[float] | np.ndarray,
    y: Sequence[float] | np.ndarray,
    span: float = 2.0 / 3.0,
    robust_iters: int = 3,
) -> Curve:
    """Cleveland's robust locally weighted linear regression.

    For each distinct time ``v`` the fit uses tricube weights
    ``(1 - (|u - v| / h)^3)^3`` where ``h`` is the distance to the
    ``ceil(span * n)``-th nearest point (duplicates counted).  Each of the
    ``robust_iters`` passes multiplies the weights by bisquare factors of the
    residuals scaled by six times their median absolute value.

    Returns the fitted values as a :class:`Curve` with one knot per distinct
    time.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != y.shape or u.ndim != 1:
        raise ValueError("u and y must be 1-d arrays of equal length")
    n = u.size
    if n < 2:
        raise ValueError("lowess needs at least 2 points")
    if not 0 < span <= 1:
        raise ValueError("span must lie in (0, 1]")
    knots, inverse = np.unique(u, return_inverse=True)
    if knots.size < 2:
        raise ValueError("lowess needs at least 2 distinct times")
    q = min(n, math.ceil(span * n - 1e-9))
    if q < 2:
        raise ValueError("span too small: fewer than 2 neighbours")

    robust = np.ones(n)
    fit = _fit_knots(u, y, knots, q, robust)
    for _ in range(robust_iters):
        resid = y - fit[inverse]
        scale = np.median(np.abs(resid))
        if scale <= 1e-12 * max(1.0, np.abs(y).max()):
            break
        robust = _bisquare(resid / (6.0 * scale))
        fit = _fit_knots(u, y, knots, q, robust)
    return Curve(knots, fit)


_BLOCK_CELLS = 2_000_000


def _fit_knots(u, y, knots, q, robust):
    out = np.empty(knots.size)
    step = max(1, _BLOCK_CELLS // u.size)
    tiny = 1e-12 * max(1.0, float(np.abs(knots).max()))
    for lo in range(0, knots.size, step):
        at = knots[lo : lo + step]
        dist = np.abs(u[None, :] - at[:, None])
        h = np.partition(dist, q - 1, axis=1)[:, q - 1]
        base = _tricube(dist / np.where(h > 0, h, tiny)[:, None])
        w = base * robust[None, :]
        sw = w.sum(axis=1)
        bad = sw <= 0
        if bad.any():
            w[bad] = base[bad]
            sw = w.sum(axis=1)
        ub = (w @ u) / sw
        yb = (w @ y) / sw
        du = u[None, :] - ub[:, None]
        sxx = (w * du * du).sum(axis=1)
        sxy = (w * du * y[None, :]).sum(axis=1)
        flat = sxx <= 1e-12 * sw * np.maximum(1.0, ub * ub)
        slope = np.where(flat, 0.0, sxy / np.where(flat, 1.0, sxx))
        out[lo : lo + step] = yb + slope * (at - ub)
    return out

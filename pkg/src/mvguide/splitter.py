"""Split-set search for a selected variable and routing of cases.

Gains are reductions of the node impurity, the total over response
columns of squared deviations about the column means of nonmissing
values.  All candidate scoring goes through additive sufficient
statistics (see :mod:`mvguide.design`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .design import Design, sse_from_stats
from .stats import Curve, curve_eval, lowess

MAX_EXHAUSTIVE_CATEGORIES = 11
MISSING_LABEL = "<missing>"


class Unsplittable(Exception):
    """The variable offers no split with two nonempty children."""


@dataclass(frozen=True)
class NumericSplit:
    var: str
    threshold: float
    missing_goes_left: bool = False
    all_missing_split: bool = False

    def describe(self, left: bool = True) -> str:
        if self.all_missing_split:
            return f"{self.var} = NA" if left else f"{self.var} != NA"
        op = "<=" if left else ">"
        return f"{self.var} {op} {self.threshold:.6g}"


@dataclass(frozen=True)
class CategoricalSplit:
    var: str
    left_categories: frozenset
    missing_in_left: bool = False

    def describe(self, left: bool = True) -> str:
        cats = sorted(self.left_categories)
        na = ", NA" if self.missing_in_left else ""
        op = "in" if left else "not in"
        return f"{self.var} {op} {{{', '.join(cats)}{na}}}"


SplitRule = Union[NumericSplit, CategoricalSplit]


@dataclass(frozen=True)
class ImpurityReport:
    parent_sse: float
    left_sse: float
    right_sse: float

    @property
    def gain(self) -> float:
        return self.parent_sse - self.left_sse - self.right_sse


# ---------------------------------------------------------------------------
# Impurity
# ---------------------------------------------------------------------------


def node_impurity(
    design: Design,
    units: np.ndarray,
    *,
    span: float = 2.0 / 3.0,
    robust_iters: int = 3,
    curve: Curve | None = None,
) -> float:
    """Node impurity.

    Multiresponse: sum over responses of squared deviations of the
    nonmissing values about their node mean (normalized responses when the
    design was built with ``normalize=True``).  Longitudinal: sum of squared
    deviations of every observation from the node's lowess curve.
    """
    units = np.asarray(units)
    if not design.longitudinal:
        y = design.yn[units]
        ok = ~np.isnan(y)
        cnt = ok.sum(axis=0)
        mean = np.where(cnt > 0, np.nansum(y, axis=0) / np.maximum(cnt, 1), 0.0)
        return float(np.nansum((y - mean) ** 2))
    idx = design.obs_index(units)
    if idx.size == 0:
        return 0.0
    u, y = design.obs_u[idx], design.obs_y[idx]
    if curve is None:
        curve = node_curve(u, y, span, robust_iters)
    return float(((y - curve_eval(curve, u)) ** 2).sum())


def node_curve(u: np.ndarray, y: np.ndarray, span: float, robust_iters: int) -> Curve:
    """Lowess mean curve, or a flat curve when fewer than two distinct times."""
    if np.unique(u).size < 2 or math.ceil(span * u.size - 1e-9) < 2:
        return Curve(np.array([u.min()]), np.array([y.mean()]))
    return lowess(u, y, span, robust_iters)


# ---------------------------------------------------------------------------
# Numeric splits
# ---------------------------------------------------------------------------


def _midpoints(v: np.ndarray) -> np.ndarray:
    c = v[:-1] + (v[1:] - v[:-1]) / 2
    return np.where(c < v[1:], c, v[:-1])


def best_numeric_split(
    design: Design, units: np.ndarray, var: int | str
) -> tuple[NumericSplit, ImpurityReport]:
    """Best threshold split ``x <= c`` over midpoints of distinct values.

    Missing values are routed with the node mean of the nonmissing values;
    the split sending all missing cases left and all others right is also
    scored when missing values exist.  Ties keep the smallest threshold.
    """
    v = design.index(var)
    units = np.asarray(units)
    x = design.x[v][units]
    s = design.stats[units]
    miss = np.isnan(x)
    xv = x[~miss]
    distinct = np.unique(xv)
    total = s.sum(axis=0)
    parent = float(sse_from_stats(total))
    best = None
    if distinct.size >= 2:
        mean = xv.mean()
        ximp = np.where(miss, mean, x)
        order = np.argsort(ximp, kind="stable")
        xs = ximp[order]
        cs = np.cumsum(s[order], axis=0)
        cuts = _midpoints(distinct)
        nleft = np.searchsorted(xs, cuts, side="right")
        left = cs[nleft - 1]
        child = sse_from_stats(left) + sse_from_stats(total - left)
        k = int(np.argmin(child))
        ls, rs = float(sse_from_stats(left[k])), float(sse_from_stats(total - left[k]))
        best = (
            NumericSplit(design.names[v], float(cuts[k]), bool(mean <= cuts[k])),
            ImpurityReport(parent, ls, rs),
        )
    if miss.any() and xv.size > 0:
        sl = s[miss].sum(axis=0)
        rep = ImpurityReport(
            parent, float(sse_from_stats(sl)), float(sse_from_stats(total - sl))
        )
        if best is None or rep.gain > best[1].gain:
            thr = float(distinct.max())
            best = (NumericSplit(design.names[v], thr, True, True), rep)
    if best is None:
        raise Unsplittable(f"{design.names[v]} has fewer than 2 distinct values")
    return best


# ---------------------------------------------------------------------------
# Categorical splits
# ---------------------------------------------------------------------------


def _category_stats(design: Design, v: int, units: np.ndarray):
    """Observed categories (missing last, as code -1) and their summed stats."""
    x = design.x[v][units]
    miss = np.isnan(x)
    codes = np.where(miss, -1, np.nan_to_num(x, nan=-1)).astype(np.intp)
    used, inv = np.unique(codes, return_inverse=True)
    inv = inv.ravel()
    if used[0] == -1:  # move missing to the end
        used = np.concatenate((used[1:], used[:1]))
        inv = (inv - 1) % used.size
    s = design.stats[units]
    flat = s.reshape(len(units), -1)
    agg = np.zeros((used.size, flat.shape[1]))
    np.add.at(agg, inv, flat)
    return used, inv, agg.reshape((used.size,) + s.shape[1:])


def _subset_masks(m: int) -> np.ndarray:
    """All 2^(m-1) - 1 proper subsets, the last category always on the right."""
    ids = np.arange(1, 2 ** (m - 1), dtype=np.int64)
    return ((ids[:, None] >> np.arange(m, dtype=np.int64)) & 1).astype(bool)


def _ordered_masks(order: np.ndarray) -> np.ndarray:
    m = order.size
    masks = np.zeros((m - 1, m), dtype=bool)
    for k in range(1, m):
        masks[k - 1, order[:k]] = True
    return masks


def _score_masks(masks: np.ndarray, cat_stats: np.ndarray, total: np.ndarray):
    left = np.tensordot(masks.astype(float), cat_stats, axes=(1, 0))
    child = sse_from_stats(left) + sse_from_stats(total - left)
    k = int(np.argmin(child))
    return k, float(sse_from_stats(left[k])), float(sse_from_stats(total - left[k]))


def pattern_orders(inv: np.ndarray, m: int, z) -> list[np.ndarray]:
    """Candidate category orderings derived from the node's sign vectors.

    Categories are ordered by their scores on the first two principal
    coordinates of their sign-pattern proportions (size weighted) and by
    their share of ``Z_k = +1`` for each response ``k``.
    """
    zz = z.z if hasattr(z, "z") else np.asarray(z)
    if zz.ndim == 1:
        zz = zz[:, None]
    bits = (zz > 0).astype(np.int64) @ (1 << np.arange(zz.shape[1], dtype=np.int64))
    _, patterns = np.unique(bits, return_inverse=True)
    patterns = patterns.ravel()
    npat = int(patterns.max()) + 1
    counts = np.bincount(inv * npat + patterns, minlength=m * npat).reshape(m, npat)
    size = counts.sum(axis=1).astype(float)
    prop = counts / np.maximum(size, 1)[:, None]
    centered = prop - (size[:, None] * prop).sum(axis=0) / size.sum()
    _, _, vt = np.linalg.svd(np.sqrt(size)[:, None] * centered, full_matrices=False)
    tie = np.arange(m)
    out = [np.lexsort((tie, centered @ vt[k])) for k in range(min(2, vt.shape[0]))]
    pos = (zz > 0).astype(float)
    for k in range(zz.shape[1]):
        share = np.bincount(inv, weights=pos[:, k], minlength=m) / np.maximum(size, 1)
        out.append(np.lexsort((tie, share)))
    return out


def _rule_from_mask(design, v, used, mask) -> CategoricalSplit:
    cats = design.categories[v]
    left = frozenset(cats[c] for c, m in zip(used, mask) if m and c >= 0)
    miss_left = bool(any(m for c, m in zip(used, mask) if c < 0))
    return CategoricalSplit(design.names[v], left, miss_left)


def best_categorical_split(
    design: Design,
    units: np.ndarray,
    var: int | str,
    z=None,
    *,
    heuristic: bool | None = None,
) -> tuple[CategoricalSplit, ImpurityReport]:
    """Best subset split ``x in A`` with missing treated as a category.

    With at most 11 observed categories all subsets are scored; beyond that
    (or with ``heuristic=True``) only contiguous cuts of a few category
    orderings derived from the sign vectors ``z`` are scored (see
    :func:`pattern_orders`).
    """
    v = design.index(var)
    units = np.asarray(units)
    used, inv, cat_stats = _category_stats(design, v, units)
    m = used.size
    if m < 2:
        raise Unsplittable(f"{design.names[v]} has a single category in the node")
    total = cat_stats.sum(axis=0)
    parent = float(sse_from_stats(total))
    if heuristic is None:
        heuristic = m > MAX_EXHAUSTIVE_CATEGORIES
    if heuristic:
        if z is None:
            raise ValueError("the heuristic search needs the node's sign vectors")
        masks = np.concatenate([_ordered_masks(o) for o in pattern_orders(inv, m, z)])
    else:
        masks = _subset_masks(m)
    k, ls, rs = _score_masks(masks, cat_stats, total)
    return _rule_from_mask(design, v, used, masks[k]), ImpurityReport(parent, ls, rs)


def best_split(design: Design, units: np.ndarray, var: int | str, z=None):
    v = design.index(var)
    if design.kinds[v] == "categorical":
        return best_categorical_split(design, units, v, z)
    return best_numeric_split(design, units, v)


# ---------------------------------------------------------------------------
# Routing
# ---------------------------------------------------------------------------


def apply_split(rule: SplitRule, x_value) -> str:
    """Route one value: returns ``"left"`` or ``"right"``."""
    missing = x_value is None or (isinstance(x_value, float) and math.isnan(x_value))
    if isinstance(rule, NumericSplit):
        if missing:
            return "left" if (rule.missing_goes_left or rule.all_missing_split) else "right"
        if isinstance(x_value, (str, bytes)) or not isinstance(x_value, (int, float, np.number)):
            raise TypeError(f"numeric split on {rule.var!r} got {x_value!r}")
        if rule.all_missing_split:
            return "right"
        return "left" if x_value <= rule.threshold else "right"
    if missing:
        return "left" if rule.missing_in_left else "right"
    if not isinstance(x_value, str):
        raise TypeError(f"categorical split on {rule.var!r} got {x_value!r}")
    return "left" if x_value in rule.left_categories else "right"


def goes_left(rule: SplitRule, x: np.ndarray, categories: tuple[str, ...] | None) -> np.ndarray:
    """Vectorized routing of coded predictor values (``NaN`` = missing)."""
    miss = np.isnan(x)
    if isinstance(rule, NumericSplit):
        if rule.all_missing_split:
            return miss
        with np.errstate(invalid="ignore"):
            left = x <= rule.threshold
        return np.where(miss, rule.missing_goes_left, left)
    left_codes = [i for i, lab in enumerate(categories) if lab in rule.left_categories]
    left = np.isin(np.where(miss, -1, np.nan_to_num(x, nan=-1)).astype(np.intp), left_codes)
    return np.where(miss, rule.missing_in_left, left)


def partition(design: Design, units: np.ndarray, rule: SplitRule):
    v = design.index(rule.var)
    left = goes_left(rule, design.x[v][units], design.categories[v])
    return units[left], units[~left]


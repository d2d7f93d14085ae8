"""Split-variable selection by chi-squared tests on residual sign patterns.

Every unit in a node gets a sign vector ``Z`` in ``{-1, +1}^d``.  Each
predictor is grouped (intervals for numeric, categories otherwise, plus a
group for missing values) and cross-tabulated against the observed ``Z``
patterns.  The predictor with the smallest p-value is selected when it
clears ``0.05 / d``; otherwise pairwise interaction tables are tried against
``0.05 / (d (d - 1))`` before falling back to the best main effect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .design import Design
from .stats import Curve, batch_table_pvalues, curve_eval, table_pvalue

ALPHA = 0.05
MAX_INTERACTION_ROWS = 64


class NoSplit(Exception):
    """No predictor can split the node."""


@dataclass(frozen=True)
class SignMatrix:
    z: np.ndarray  # (units, d) int8 entries in {-1, +1}

    @property
    def d(self) -> int:
        return self.z.shape[1]

    @property
    def rows(self) -> np.ndarray:
        return self.z

    def pattern_codes(self) -> np.ndarray:
        """Dense integer label per unit, one per observed pattern."""
        bits = (self.z > 0).astype(np.int64) @ (1 << np.arange(self.d, dtype=np.int64))
        _, inv = np.unique(bits, return_inverse=True)
        return inv.ravel()


@dataclass(frozen=True)
class GroupAssignment:
    groups: np.ndarray  # group index per observation
    n_groups: int  # including the missing group when present
    missing_group: int | None
    cuts: tuple[float, ...] = ()


@dataclass(frozen=True)
class Selection:
    kind: str  # "main_effect" | "interaction"
    variables: tuple[str, ...]
    p_values: dict[str, float]
    chosen_p: float
    interaction_p: dict[tuple[str, str], float] = field(default_factory=dict)

    @property
    def variable(self) -> str:
        return self.variables[0]


# ---------------------------------------------------------------------------
# Sign vectors
# ---------------------------------------------------------------------------


def sign_vectors_multi(
    design: Design, units: np.ndarray, missing_y_sign: int = -1
) -> SignMatrix:
    """``Z_k = +1`` iff ``Y_k`` exceeds the node mean of the nonmissing ``Y_k``."""
    if missing_y_sign not in (-1, 1):
        raise ValueError("missing_y_sign must be -1 or +1")
    y = design.yn[units]
    if len(units) == 0:
        raise ValueError("empty node")
    miss = np.isnan(y)
    if miss.all(axis=0).any():
        raise ValueError("a response is entirely missing in the node")
    mean = np.nanmean(y, axis=0)
    with np.errstate(invalid="ignore"):
        z = np.where(y > mean, 1, -1).astype(np.int8)
    z[miss] = missing_y_sign
    return SignMatrix(z)


def interval_index(u: np.ndarray, lo: float, hi: float, d: int) -> np.ndarray:
    """Index of the equal-length interval of ``[lo, hi]`` containing each ``u``."""
    if hi <= lo:
        return np.zeros(u.shape, dtype=np.intp)
    k = np.floor((u - lo) / (hi - lo) * d).astype(np.intp)
    return np.clip(k, 0, d - 1)


def trajectory_signs(
    owner: np.ndarray,
    u: np.ndarray,
    y: np.ndarray,
    n_units: int,
    curve: Curve,
    d: int,
    time_range: tuple[float, float] | None = None,
) -> SignMatrix:
    """Interval sign votes of observations relative to ``curve``.

    ``Z_k = +1`` for a unit when, among its observations in interval ``k``,
    those strictly above the curve are at least as many as those on or below
    it; an interval without observations gives ``-1``.
    """
    if d < 1:
        raise ValueError("d must be at least 1")
    if n_units == 0:
        raise ValueError("empty series set")
    lo, hi = time_range if time_range is not None else (u.min(), u.max())
    k = interval_index(u, lo, hi, d)
    above = y > curve_eval(curve, u)
    cell = owner * d + k
    n_above = np.bincount(cell, weights=above, minlength=n_units * d)
    n_all = np.bincount(cell, minlength=n_units * d)
    z = np.where((n_all > 0) & (n_above >= n_all - n_above), 1, -1).astype(np.int8)
    return SignMatrix(z.reshape(n_units, d))


def sign_vectors_long(
    design_or_series, units_or_curve, curve_or_d=None, d: int | None = None
) -> SignMatrix:
    """Longitudinal sign vectors.

    Accepts either ``(design, units, curve, d)`` or ``(series, curve, d)``
    where ``series`` is a sequence of :class:`~mvguide.dataset.SubjectSeries`.
    Intervals split the pooled time range of the given units into ``d``
    equal lengths.
    """
    if isinstance(design_or_series, Design):
        design, units, curve = design_or_series, np.asarray(units_or_curve), curve_or_d
        idx = design.obs_index(units)
        owner = design.obs_owner(units)
        u, y = design.obs_u[idx], design.obs_y[idx]
        return trajectory_signs(owner, u, y, len(units), curve, d)
    series: Sequence = design_or_series
    curve, d = units_or_curve, curve_or_d
    if not series:
        raise ValueError("empty series set")
    lens = [len(s.u) for s in series]
    owner = np.repeat(np.arange(len(series)), lens)
    u = np.concatenate([np.asarray(s.u, float) for s in series])
    y = np.concatenate([np.asarray(s.y, float) for s in series])
    return trajectory_signs(owner, u, y, len(series), curve, d)


# ---------------------------------------------------------------------------
# Grouping and tests
# ---------------------------------------------------------------------------


def group_numeric(x: np.ndarray, node_n: int, d: int) -> GroupAssignment:
    """Group a numeric predictor into 3 or 4 intervals plus a missing group.

    Nodes with fewer than ``5 * 2**(d + 2)`` units use cut points
    ``mean +- s*sqrt(3)/3``; larger nodes use ``mean`` and
    ``mean +- s*sqrt(3)/2``.  Intervals are closed on the right.
    """
    x = np.asarray(x, dtype=float)
    miss = np.isnan(x)
    xv = x[~miss]
    if xv.size == 0:
        raise ValueError("no nonmissing values")
    mean = xv.mean()
    s = xv.std(ddof=1) if xv.size > 1 else 0.0
    if node_n < 5 * 2 ** (d + 2):
        h = s * math.sqrt(3) / 3
        cuts = (mean - h, mean + h)
    else:
        h = s * math.sqrt(3) / 2
        cuts = (mean - h, mean, mean + h)
    groups = np.searchsorted(np.asarray(cuts), x, side="left")
    # Collapse to the occupied nonmissing groups so s == 0 gives one group.
    occupied = np.bincount(groups[~miss], minlength=len(cuts) + 1) > 0
    relabel = np.cumsum(occupied) - 1
    out = np.empty(x.size, dtype=np.intp)
    out[~miss] = relabel[groups[~miss]]
    missing_group = None
    n = int(occupied.sum())
    if miss.any():
        missing_group = n
        out[miss] = n
        n += 1
    return GroupAssignment(out, n, missing_group, cuts)


def group_categorical(x: np.ndarray) -> GroupAssignment:
    miss = np.isnan(x)
    out = np.empty(x.size, dtype=np.intp)
    used, dense = np.unique(x[~miss].astype(np.intp), return_inverse=True)
    out[~miss] = dense.ravel()
    n = used.size
    missing_group = None
    if miss.any():
        missing_group = n
        out[miss] = n
        n += 1
    return GroupAssignment(out, n, missing_group)


def _groups(design: Design, var: int, units: np.ndarray, d: int) -> GroupAssignment:
    x = design.x[var][units]
    if design.kinds[var] == "categorical" or np.isnan(x).all():
        return group_categorical(x)
    return group_numeric(x, len(units), d)


def _patterns(z: SignMatrix | np.ndarray) -> np.ndarray:
    if isinstance(z, SignMatrix):
        return z.pattern_codes()
    return np.asarray(z)


def main_effect_pvalue(
    design: Design, units: np.ndarray, z: SignMatrix, var: int | str, d: int | None = None
) -> float:
    """p-value of the grouped-predictor by sign-pattern independence test."""
    var = design.index(var)
    d = z.d if d is None and isinstance(z, SignMatrix) else d
    g = _groups(design, var, units, d)
    if g.n_groups < 2:
        return 1.0
    return table_pvalue(g.groups, _patterns(z))


def _halves(design: Design, var: int, units: np.ndarray) -> tuple[np.ndarray, int]:
    """Interaction grouping: two halves at the mean, or one set per category."""
    x = design.x[var][units]
    miss = np.isnan(x)
    out = np.full(x.size, -1, dtype=np.intp)
    if design.kinds[var] == "categorical":
        used, dense = np.unique(x[~miss].astype(np.intp), return_inverse=True)
        out[~miss] = dense.ravel()
        return out, used.size
    xv = x[~miss]
    if xv.size == 0:
        return out, 0
    above = x[~miss] > xv.mean()
    out[~miss] = above.astype(np.intp)
    return out, int(np.unique(above).size)


def interaction_pvalue(
    design: Design,
    units: np.ndarray,
    z: SignMatrix,
    var_i: int | str,
    var_j: int | str,
    _cache: dict | None = None,
) -> float:
    """p-value of the cross-grouped pair by sign-pattern independence test.

    Rows are the nonempty cells of the product grouping; units missing
    either variable form one extra row.  Pairs where either variable has a
    single group, or with more than 64 rows, return 1.
    """
    i, j = design.index(var_i), design.index(var_j)
    if i == j:
        raise ValueError("interaction needs two distinct variables")
    if _cache is None:
        _cache = {}
    for v in (i, j):
        if v not in _cache:
            _cache[v] = _halves(design, v, units)
    gi, ni = _cache[i]
    gj, nj = _cache[j]
    if ni < 2 or nj < 2:
        return 1.0
    miss = (gi < 0) | (gj < 0)
    cell = np.where(miss, ni * nj, gi * nj + gj)
    used, rows = np.unique(cell, return_inverse=True)
    if used.size > MAX_INTERACTION_ROWS:
        return 1.0
    return table_pvalue(rows.ravel(), _patterns(z))


def n_distinct(design: Design, var: int, units: np.ndarray) -> int:
    """Distinct values in the node, counting missing as one value."""
    x = design.x[var][units]
    miss = np.isnan(x)
    xv = x[~miss]
    if xv.size == 0:
        return 1
    lo, hi = xv.min(), xv.max()
    if lo == hi:
        return 1 + int(miss.any())
    return np.unique(xv).size + int(miss.any())


def _varies(x: np.ndarray) -> bool:
    miss = np.isnan(x)
    if miss.all():
        return False
    return bool(miss.any() or x[~miss].min() < x[~miss].max())


def main_threshold(d: int) -> float:
    return ALPHA / d


def interaction_threshold(d: int) -> float:
    return ALPHA / max(d * (d - 1), 1)


def select_split_variable(
    design: Design, units: np.ndarray, z: SignMatrix, d: int | None = None
) -> Selection:
    """Pick the split variable (or pair) for a node.

    Raises :class:`NoSplit` when every predictor is constant in the node.
    """
    d = z.d if d is None else d
    units = np.asarray(units)
    active = [v for v in range(design.n_predictors) if _varies(design.x[v][units])]
    if not active:
        raise NoSplit("all predictors are constant in the node")
    pat = z.pattern_codes()
    p = np.ones(design.n_predictors)
    groups = [_groups(design, v, units, d) for v in active]
    multi = [k for k, g in enumerate(groups) if g.n_groups >= 2]
    if multi:
        p[[active[k] for k in multi]] = batch_table_pvalues(
            np.array([groups[k].groups for k in multi]), pat
        )
    p_values = dict(zip(design.names, p.tolist()))
    best = int(np.argmin(p))
    if p[best] < main_threshold(d):
        return Selection("main_effect", (design.names[best],), p_values, float(p[best]))

    halves = {v: _halves(design, v, units) for v in active}
    pairs, cells = [], []
    inter: dict[tuple[str, str], float] = {}
    for a_pos, a in enumerate(active):
        for b in active[a_pos + 1 :]:
            inter[(design.names[a], design.names[b])] = 1.0
            (gi, ni), (gj, nj) = halves[a], halves[b]
            if ni < 2 or nj < 2:
                continue
            miss = (gi < 0) | (gj < 0)
            cell = np.where(miss, ni * nj, gi * nj + gj)
            used, rows = np.unique(cell, return_inverse=True)
            if used.size > MAX_INTERACTION_ROWS:
                continue
            pairs.append((a, b))
            cells.append(rows.ravel())
    best_pair, best_pp = None, math.inf
    if pairs:
        pp = batch_table_pvalues(np.array(cells), pat)
        for (a, b), pv in zip(pairs, pp.tolist()):
            inter[(design.names[a], design.names[b])] = pv
        k = int(np.argmin(pp))
        best_pair, best_pp = pairs[k], float(pp[k])
    if best_pair is not None and best_pp < interaction_threshold(d):
        names = (design.names[best_pair[0]], design.names[best_pair[1]])
        return Selection("interaction", names, p_values, best_pp, inter)
    return Selection("main_effect", (design.names[best],), p_values, float(p[best]), inter)

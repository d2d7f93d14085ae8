"""Exhaustive-search multivariate tree used as the comparator.

Every predictor is searched at every node and the split with the largest
reduction of the summed per-response SSE wins.  Gains are computed on the
rows observed in the candidate variable, and rows missing the chosen split
variable stop at that node.  Both behaviours favour variables with many
distinct values and penalise variables with missing values.
"""

from __future__ import annotations

import numpy as np

from .dataset import Dataset
from .design import Design, sse_from_stats
from .splitter import (
    CategoricalSplit,
    ImpurityReport,
    NumericSplit,
    SplitRule,
    Unsplittable,
    _category_stats,
    _ordered_masks,
    _rule_from_mask,
    _score_masks,
    _subset_masks,
    best_numeric_split,
    goes_left,
)

MAX_EXHAUSTIVE_CATEGORIES = 15


def complete_responses(ds: Dataset) -> Dataset:
    """Rows with every response observed (longitudinal data pass through)."""
    if ds.layout != "multiresponse":
        return ds
    keep = ~np.isnan(ds.response_matrix()).any(axis=1)
    if keep.all():
        return ds
    if not keep.any():
        raise ValueError("no row has all responses observed")
    return ds.take(np.flatnonzero(keep))


def _mean_orderings(cat_stats: np.ndarray) -> list[np.ndarray]:
    """Category orderings by each response mean and by the first PC of the mean matrix."""
    cnt = np.maximum(cat_stats[..., 0], 1.0)
    means = cat_stats[..., 1] / cnt  # (categories, columns)
    m = means.shape[0]
    orders = [np.lexsort((np.arange(m), means[:, k])) for k in range(means.shape[1])]
    if means.shape[1] > 1:
        w = np.sqrt(cat_stats[:, 0, 0])[:, None]
        centered = means - (w * w * means).sum(axis=0) / max((w * w).sum(), 1.0)
        _, _, vt = np.linalg.svd(w * centered, full_matrices=False)
        orders.append(np.lexsort((np.arange(m), centered @ vt[0])))
    return orders


def cart_categorical_split(design: Design, units: np.ndarray, v: int):
    used, _, cat_stats = _category_stats(design, v, units)
    m = used.size
    if m < 2:
        raise Unsplittable(f"{design.names[v]} has a single category in the node")
    total = cat_stats.sum(axis=0)
    parent = float(sse_from_stats(total))
    if m <= MAX_EXHAUSTIVE_CATEGORIES:
        masks = _subset_masks(m)
    else:
        masks = np.unique(
            np.concatenate([_ordered_masks(o) for o in _mean_orderings(cat_stats)]), axis=0
        )
    k, ls, rs = _score_masks(masks, cat_stats, total)
    return _rule_from_mask(design, v, used, masks[k]), ImpurityReport(parent, ls, rs)


def cart_best_split(design: Design, units: np.ndarray) -> tuple[SplitRule, ImpurityReport]:
    """Largest-gain split over all predictors, each scored on its observed rows.

    Ties go to the earlier predictor.
    """
    units = np.asarray(units)
    if units.size < 2:
        raise Unsplittable("fewer than 2 rows")
    best = None
    for v in range(design.n_predictors):
        obs = units[~np.isnan(design.x[v][units])]
        if obs.size < 2:
            continue
        try:
            if design.kinds[v] == "categorical":
                rule, rep = cart_categorical_split(design, obs, v)
            else:
                rule, rep = best_numeric_split(design, obs, v)
        except Unsplittable:
            continue
        if best is None or rep.gain > best[1].gain:
            best = (rule, rep, obs)
    if best is None:
        raise Unsplittable("no predictor offers a split")
    rule, rep, obs = best
    left = goes_left(rule, design.x[design.index(rule.var)][obs], design.categories[design.index(rule.var)])
    # prediction-time routing of missing values: the larger child
    to_left = bool(left.sum() >= (~left).sum())
    if isinstance(rule, NumericSplit):
        rule = NumericSplit(rule.var, rule.threshold, to_left)
    else:
        rule = CategoricalSplit(rule.var, rule.left_categories, to_left)
    return rule, rep


def cart_finder(design: Design, units: np.ndarray, config, node):
    """Node splitter for the tree builder; rows missing the split variable are dropped."""
    if design.longitudinal:
        raise ValueError("the baseline method supports the multiresponse layout only")
    try:
        rule, _ = cart_best_split(design, units)
    except Unsplittable:
        return None
    v = design.index(rule.var)
    x = design.x[v][units]
    obs = units[~np.isnan(x)]
    left = goes_left(rule, design.x[v][obs], design.categories[v])
    return rule, obs[left], obs[~left]


def grow_baseline(data, config=None):
    """Grow an unpruned baseline tree (rows missing any response are dropped first)."""
    from .tree import grow

    return grow(data, config, method="baseline")

"""Tree growing, cost-complexity pruning, cross-validation and prediction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Mapping

import numpy as np

from .dataset import Dataset
from .design import Design, design_from_dataset, encode_predictors, sse_from_stats
from .selector import (
    NoSplit,
    SignMatrix,
    select_split_variable,
    sign_vectors_multi,
    trajectory_signs,
)
from .splitter import (
    CategoricalSplit,
    NumericSplit,
    SplitRule,
    Unsplittable,
    apply_split,
    best_numeric_split,
    best_split,
    goes_left,
    node_curve,
    partition,
)
from .stats import Curve, curve_eval

FORMAT_VERSION = 1
LOOKAHEAD_CANDIDATES = 32


@dataclass
class GrowConfig:
    """Tree growing options.

    ``min_node_size`` defaults to 10 rows (multiresponse) or 5 subjects
    (longitudinal).  ``intervals`` is the number of time intervals used for
    longitudinal sign vectors.
    """

    min_node_size: int | None = None
    max_depth: int = 30
    missing_y_sign: int = -1
    normalize: bool = False
    span: float = 2.0 / 3.0
    robust_iters: int = 3
    intervals: int = 3

    def node_minimum(self, layout: str) -> int:
        if self.min_node_size is not None:
            return self.min_node_size
        return 5 if layout == "longitudinal" else 10

    def __post_init__(self):
        if self.min_node_size is not None and self.min_node_size < 2:
            raise ValueError("min_node_size must be at least 2")
        if self.max_depth < 0 or self.intervals < 1:
            raise ValueError("max_depth must be >= 0 and intervals >= 1")
        if self.missing_y_sign not in (-1, 1):
            raise ValueError("missing_y_sign must be -1 or +1")


@dataclass
class TreeNode:
    id: int
    n: int
    sse: float
    depth: int = 0
    mean: np.ndarray | None = None
    curve: Curve | None = None
    rule: SplitRule | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    units: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_terminal(self) -> bool:
        return self.rule is None

    def walk(self) -> Iterator["TreeNode"]:
        yield self
        if self.left is not None:
            yield from self.left.walk()
            yield from self.right.walk()


@dataclass
class PruneStep:
    alpha: float
    leaves: frozenset
    n_leaves: int
    train_sse: float
    cv_error: float = math.nan
    cv_se: float = math.nan


@dataclass
class Tree:
    layout: str
    method: str
    names: tuple[str, ...]
    kinds: tuple[str, ...]
    categories: tuple[tuple[str, ...] | None, ...]
    response_names: tuple[str, ...]
    root: TreeNode
    config: GrowConfig = field(default_factory=GrowConfig)
    scale: tuple[np.ndarray, np.ndarray] | None = None
    prune_table: list[PruneStep] | None = None
    time_name: str | None = None
    subject_name: str | None = None

    # -- structure ------------------------------------------------------
    def nodes(self) -> list[TreeNode]:
        return list(self.root.walk())

    def terminals(self) -> list[TreeNode]:
        return [n for n in self.root.walk() if n.is_terminal]

    @property
    def n_leaves(self) -> int:
        return len(self.terminals())

    def node(self, node_id: int) -> TreeNode:
        for n in self.root.walk():
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def training_sse(self) -> float:
        return float(sum(n.sse for n in self.terminals()))

    def pruned(self, leaves: frozenset) -> "Tree":
        """Copy of the tree with every node in ``leaves`` made terminal."""

        def cut(node: TreeNode) -> TreeNode:
            if node.is_terminal or node.id in leaves:
                return replace(node, rule=None, left=None, right=None)
            return replace(node, left=cut(node.left), right=cut(node.right))

        return replace(self, root=cut(self.root), prune_table=self.prune_table)

    # -- prediction -----------------------------------------------------
    def _design_stub(self) -> Design:
        return Design(
            layout=self.layout,
            names=self.names,
            kinds=self.kinds,
            x=(),
            categories=self.categories,
            stats=np.empty((0, 0, 3)),
            response_names=self.response_names,
        )

    def leaf_ids(self, xcols, leaves: frozenset | None = None) -> np.ndarray:
        """Terminal node id reached by each case; ``xcols`` are coded predictors."""
        n = len(xcols[0]) if xcols else 0
        out = np.zeros(n, dtype=np.int64)
        stack = [(self.root, np.arange(n))]
        index = {name: i for i, name in enumerate(self.names)}
        while stack:
            node, idx = stack.pop()
            if node.is_terminal or (leaves is not None and node.id in leaves):
                out[idx] = node.id
                continue
            v = index[node.rule.var]
            left = goes_left(node.rule, xcols[v][idx], self.categories[v])
            stack.append((node.left, idx[left]))
            stack.append((node.right, idx[~left]))
        return out

    def predict(self, x: Mapping[str, object], u: float | None = None):
        """Predict one case given a mapping of predictor name to value.

        Returns the mean response vector, or the value of the terminal
        node's curve at time ``u`` for longitudinal trees.
        """
        missing = [n for n in self.names if n not in x]
        if missing:
            raise ValueError(f"missing predictor values for {missing}")
        node = self.root
        while not node.is_terminal:
            value = x[node.rule.var]
            if isinstance(value, (int, np.integer)) and isinstance(node.rule, NumericSplit):
                value = float(value)
            node = node.left if apply_split(node.rule, value) == "left" else node.right
        if self.layout == "longitudinal":
            if u is None:
                raise ValueError("longitudinal prediction needs a time u")
            return curve_eval(node.curve, u)
        return node.mean.copy()

    def predict_coded(
        self, xcols, u: np.ndarray | None = None, leaves: frozenset | None = None
    ) -> np.ndarray:
        ids = self.leaf_ids(xcols, leaves)
        by_id = {n.id: n for n in self.root.walk()}
        if self.layout == "longitudinal":
            out = np.empty(len(ids))
            for node_id in np.unique(ids):
                sel = ids == node_id
                out[sel] = curve_eval(by_id[node_id].curve, u[sel])
            return out
        means = {i: by_id[i].mean for i in np.unique(ids)}
        return np.array([means[i] for i in ids]).reshape(len(ids), -1)

    def predict_dataset(self, ds: Dataset) -> np.ndarray:
        """Predictions for every row of ``ds``.

        Multiresponse trees return an ``(n_rows, d)`` array; longitudinal
        trees return one value per row, evaluated at the row's time.
        """
        xcols = encode_predictors(self._design_stub(), ds)
        u = None
        if self.layout == "longitudinal":
            u = ds[self.time_name].values if self.time_name else ds.by_role("time")[0].values
        return self.predict_coded(xcols, u)

    # -- rendering / serialization --------------------------------------
    def to_text(self) -> str:
        return render_text(self)

    def to_json(self) -> str:
        return serialize(self)


# ---------------------------------------------------------------------------
# Growing
# ---------------------------------------------------------------------------

Finder = Callable[[Design, np.ndarray, GrowConfig, TreeNode], "tuple | None"]


def as_design(data: Dataset | Design, config: GrowConfig) -> Design:
    if isinstance(data, Design):
        return data
    return design_from_dataset(data, normalize=config.normalize)


def _summarize(design: Design, units: np.ndarray, config: GrowConfig, node: TreeNode, parent):
    if design.longitudinal:
        idx = design.obs_index(units)
        u, y = design.obs_u[idx], design.obs_y[idx]
        if idx.size == 0:
            node.curve = parent.curve
            node.sse = 0.0
            return
        node.curve = node_curve(u, y, config.span, config.robust_iters)
        node.sse = float(((y - curve_eval(node.curve, u)) ** 2).sum())
        return
    y = design.y[units]
    ok = ~np.isnan(y)
    cnt = ok.sum(axis=0)
    mean = np.where(cnt > 0, np.where(ok, y, 0.0).sum(axis=0) / np.maximum(cnt, 1), np.nan)
    if parent is not None:
        mean = np.where(cnt > 0, mean, parent.mean)
    node.mean = mean
    node.sse = float(sse_from_stats(design.stats[units].sum(axis=0)))


def _best_gain(design: Design, units: np.ndarray, var: int, z) -> float:
    if len(units) < 2:
        return 0.0
    try:
        return best_split(design, units, var, z)[1].gain
    except Unsplittable:
        return 0.0


def _lookahead_rules(design: Design, units: np.ndarray, v: int, z):
    """Coarse candidate rules for ``v`` and, for numeric ``v``, all its midpoints.

    Numeric candidates are at most ``LOOKAHEAD_CANDIDATES`` evenly spaced
    midpoints plus the best single-level split; the full midpoint array is
    returned so the winner can be refined locally.
    """
    if design.kinds[v] == "categorical":
        try:
            return [best_split(design, units, v, z)[0]], None
        except Unsplittable:
            return [], None
    x = design.x[v][units]
    miss = np.isnan(x)
    distinct = np.unique(x[~miss])
    if distinct.size < 2:
        try:
            return [best_numeric_split(design, units, v)[0]], None
        except Unsplittable:
            return [], None
    cuts = distinct[:-1] + (distinct[1:] - distinct[:-1]) / 2
    coarse = cuts
    if cuts.size > LOOKAHEAD_CANDIDATES:
        pick = np.unique(np.linspace(0, cuts.size - 1, LOOKAHEAD_CANDIDATES).round().astype(int))
        coarse = cuts[pick]
    rules = _numeric_rules(design, v, x[~miss].mean(), coarse)
    rules.append(best_numeric_split(design, units, v)[0])
    return rules, (cuts if coarse is not cuts else None)


def _numeric_rules(design: Design, v: int, mean: float, cuts) -> list:
    return [NumericSplit(design.names[v], float(c), bool(mean <= c)) for c in cuts]


def _child_numeric_gains(design: Design, units: np.ndarray, left: np.ndarray, v: int):
    """Best single-split gains on numeric ``v`` inside each child of several partitions.

    ``left`` is a (partitions, units) boolean array; ``v`` must have no
    missing values in ``units``.  Returns (partitions,) summed gains of the
    left and right children.
    """
    x = design.x[v][units]
    order = np.argsort(x, kind="stable")
    xs = x[order]
    s = design.stats[units][order]
    boundary = np.flatnonzero(xs[1:] > xs[:-1])
    if boundary.size == 0:
        return np.zeros(left.shape[0])
    total = 0.0
    for mask in (left[:, order], ~left[:, order]):
        ms = s[None] * mask[:, :, None, None]
        cs = np.cumsum(ms, axis=1)
        whole = cs[:, -1]
        cl = cs[:, boundary]
        child = sse_from_stats(cl) + sse_from_stats(whole[:, None] - cl)
        gain = sse_from_stats(whole) - child.min(axis=1)
        total = total + np.maximum(gain, 0.0)
    return total


def _two_level_gains(design: Design, units: np.ndarray, first: int, second: int, rules, z):
    """Own gain plus best child gains on ``second`` for each rule on ``first``."""
    kept, masks = [], []
    for rule in rules:
        left = goes_left(rule, design.x[first][units], design.categories[first])
        if left.all() or not left.any():
            continue
        kept.append(rule)
        masks.append(left)
    if not kept:
        return kept, np.empty(0)
    masks = np.array(masks)
    s = design.stats[units]
    parent = float(sse_from_stats(s.sum(axis=0)))
    ls = np.tensordot(masks.astype(float), s, axes=(1, 0))
    own = parent - sse_from_stats(ls) - sse_from_stats(s.sum(axis=0) - ls)
    if design.kinds[second] == "numeric" and not np.isnan(design.x[second][units]).any():
        deeper = _child_numeric_gains(design, units, masks, second)
    else:
        deeper = np.array(
            [
                _best_gain(design, units[m], second, _sub_signs(z, units, units[m]))
                + _best_gain(design, units[~m], second, _sub_signs(z, units, units[~m]))
                for m in masks
            ]
        )
    return kept, own + deeper


def pair_split(design: Design, units: np.ndarray, pair, z) -> SplitRule:
    """Split for an interaction-selected pair.

    Each member's candidate splits are scored by their own gain plus the best
    gains from splitting both children on the other member; the rule with the
    largest two-level gain wins.  When numeric candidates were thinned, the
    midpoints between the winner's neighbouring candidates are scored too.
    """
    best_rule, best_gain = None, -math.inf
    a, b = (design.index(p) for p in pair)
    for first, second in ((a, b), (b, a)):
        rules, all_cuts = _lookahead_rules(design, units, first, z)
        rules, totals = _two_level_gains(design, units, first, second, rules, z)
        if not rules:
            continue
        k = int(np.argmax(totals))
        rule, gain = rules[k], float(totals[k])
        if all_cuts is not None and not rule.all_missing_split:
            coarse = np.array([r.threshold for r in rules if not r.all_missing_split])
            lo = coarse[coarse < rule.threshold].max(initial=-math.inf)
            hi = coarse[coarse > rule.threshold].min(initial=math.inf)
            window = all_cuts[(all_cuts > lo) & (all_cuts < hi)]
            x = design.x[first][units]
            fine, ftot = _two_level_gains(
                design, units, first, second, _numeric_rules(design, first, np.nanmean(x), window), z
            )
            if fine and ftot.max() > gain + 1e-12:
                j = int(np.argmax(ftot))
                rule, gain = fine[j], float(ftot[j])
        if gain > best_gain + 1e-12:
            best_rule, best_gain = rule, gain
    if best_rule is None:
        raise Unsplittable("no valid split for the selected pair")
    return best_rule


def _sub_signs(z: SignMatrix, units: np.ndarray, sub: np.ndarray) -> SignMatrix:
    # units are kept sorted throughout growth, so positions come from a search
    return SignMatrix(z.z[np.searchsorted(units, sub)])


def node_signs(design: Design, units: np.ndarray, config: GrowConfig, node: TreeNode):
    if design.longitudinal:
        idx = design.obs_index(units)
        owner = design.obs_owner(units)
        return trajectory_signs(
            owner, design.obs_u[idx], design.obs_y[idx], len(units), node.curve, config.intervals
        )
    return sign_vectors_multi(design, units, config.missing_y_sign)


def guide_finder(design: Design, units: np.ndarray, config: GrowConfig, node: TreeNode):
    """Select a variable by chi-squared tests, then search its split set."""
    z = node_signs(design, units, config, node)
    try:
        sel = select_split_variable(design, units, z, z.d)
        if sel.kind == "interaction":
            rule = pair_split(design, units, sel.variables, z)
        else:
            rule = best_split(design, units, sel.variable, z)[0]
    except (NoSplit, Unsplittable):
        return None
    left, right = partition(design, units, rule)
    return rule, left, right


def _finder_for(method: str) -> Finder:
    if method == "guide":
        return guide_finder
    if method == "baseline":
        from .baseline import cart_finder

        return cart_finder
    raise ValueError(f"unknown method {method!r}")


def grow_design(design: Design, config: GrowConfig, method: str = "guide") -> Tree:
    """Grow an unpruned tree on a prepared :class:`Design`."""
    if design.n_units == 0:
        raise ValueError("empty dataset")
    finder = _finder_for(method)
    min_n = config.node_minimum(design.layout)
    root_sse = None

    def build(units: np.ndarray, node_id: int, depth: int, parent) -> TreeNode:
        nonlocal root_sse
        node = TreeNode(node_id, int(units.size), 0.0, depth, units=units)
        _summarize(design, units, config, node, parent)
        if root_sse is None:
            root_sse = node.sse
        if (
            units.size < min_n
            or depth >= config.max_depth
            or node.sse <= 1e-12 * max(root_sse, 1e-300)
        ):
            return node
        found = finder(design, units, config, node)
        if found is None:
            return node
        rule, left, right = found
        if left.size == 0 or right.size == 0:
            return node
        node.rule = rule
        node.left = build(left, 2 * node_id, depth + 1, node)
        node.right = build(right, 2 * node_id + 1, depth + 1, node)
        return node

    root = build(np.arange(design.n_units), 1, 0, None)
    return Tree(
        layout=design.layout,
        method=method,
        names=design.names,
        kinds=design.kinds,
        categories=design.categories,
        response_names=design.response_names,
        root=root,
        config=config,
        scale=design.scale,
        time_name=design.time_name,
        subject_name=design.subject_name,
    )


def grow(data: Dataset | Design, config: GrowConfig | None = None, method: str = "guide") -> Tree:
    """Grow an unpruned tree; ``method`` is ``"guide"`` or ``"baseline"``."""
    config = config or GrowConfig()
    if method == "baseline" and isinstance(data, Dataset):
        from .baseline import complete_responses

        data = complete_responses(data)
    return grow_design(as_design(data, config), config, method)


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------


def prune_sequence(tree: Tree) -> list[PruneStep]:
    """Minimal cost-complexity (weakest-link) pruning sequence.

    The first step (``alpha = 0``) is the full tree with any branch that
    does not lower the training impurity already collapsed.  Each later step
    collapses the internal nodes minimising
    ``g(t) = (R(t) - R(T_t)) / (|T_t| - 1)``; the last step is the root alone.
    """
    root = tree.root
    nodes = {n.id: n for n in root.walk()}
    eps = 1e-10 * max(root.sse, 1e-300)
    collapsed: set[int] = set()

    def branch_stats(node: TreeNode, out: dict) -> tuple[float, int]:
        if node.is_terminal or node.id in collapsed:
            return node.sse, 1
        rl, nl = branch_stats(node.left, out)
        rr, nr = branch_stats(node.right, out)
        out[node.id] = (rl + rr, nl + nr)
        return rl + rr, nl + nr

    steps: list[PruneStep] = []
    alpha = 0.0
    while True:
        info: dict[int, tuple[float, int]] = {}
        r_tree, n_leaves = branch_stats(root, info)
        g = {i: (nodes[i].sse - r) / (k - 1) for i, (r, k) in info.items()}
        weak = [i for i, gi in g.items() if gi <= alpha + eps]
        if weak:
            collapsed.update(weak)
            continue
        steps.append(PruneStep(alpha, _leaf_set(root, collapsed), n_leaves, r_tree))
        if not g:
            return steps
        alpha = min(g.values())


def _leaf_set(root: TreeNode, collapsed: set[int]) -> frozenset:
    out = []
    stack = [root]
    while stack:
        n = stack.pop()
        if n.is_terminal or n.id in collapsed:
            out.append(n.id)
        else:
            stack.extend((n.left, n.right))
    return frozenset(out)


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


def _unit_errors(tree: Tree, leaves: frozenset, design: Design, units: np.ndarray) -> np.ndarray:
    xcols = tuple(col[units] for col in design.x)
    if design.longitudinal:
        idx = design.obs_index(units)
        owner = design.obs_owner(units)
        xobs = tuple(col[owner] for col in xcols)
        pred = tree.predict_coded(xobs, design.obs_u[idx], leaves)
        sq = (design.obs_y[idx] - pred) ** 2
        return np.bincount(owner, weights=sq, minlength=len(units))
    pred = tree.predict_coded(xcols, None, leaves)
    center, spread = design.scale
    err = (pred - center) / spread - design.yn[units]
    return np.nansum(err * err, axis=1)


def fold_labels(n: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % folds
    rng.shuffle(labels)
    return labels


def cross_validate(
    data: Dataset | Design,
    config: GrowConfig | None = None,
    folds: int = 10,
    se_rule: float = 0.0,
    seed: int = 0,
    method: str = "guide",
) -> Tree:
    """Grow, then prune by V-fold cross-validation.

    Candidate subtrees of the full tree are scored at the geometric means of
    consecutive critical alphas.  The minimum-error subtree is returned, or
    with ``se_rule > 0`` the smallest subtree whose error is within
    ``se_rule`` standard errors of the minimum.  Longitudinal folds
    partition subjects.  The returned tree carries the scored sequence in
    ``prune_table``.
    """
    config = config or GrowConfig()
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if method == "baseline" and isinstance(data, Dataset):
        from .baseline import complete_responses

        data = complete_responses(data)
    design = as_design(data, config)
    tree = grow_design(design, config, method)
    steps = prune_sequence(tree)
    n = design.n_units
    if len(steps) == 1 or n < 2:
        steps[0].cv_error = math.nan
        out = tree.pruned(steps[0].leaves)
        out.prune_table = steps
        return out
    alphas = [s.alpha for s in steps]
    betas = [math.sqrt(alphas[k] * alphas[k + 1]) for k in range(len(alphas) - 1)]
    betas.append(math.inf)
    labels = fold_labels(n, min(folds, n), seed)
    errors = np.zeros((len(steps), n))
    for f in range(min(folds, n)):
        test = np.flatnonzero(labels == f)
        train = np.flatnonzero(labels != f)
        if test.size == 0 or train.size == 0:
            continue
        sub = design.subset(train)
        if not sub.longitudinal and np.isnan(sub.yn).all(axis=0).any():
            raise ValueError(f"fold {f} has a response with no observed values")
        ftree = grow_design(sub, config, method)
        fsteps = prune_sequence(ftree)
        falphas = np.array([s.alpha for s in fsteps])
        for k, b in enumerate(betas):
            j = int(np.searchsorted(falphas, b, side="right")) - 1
            errors[k, test] = _unit_errors(ftree, fsteps[j].leaves, design, test)
    cv = errors.mean(axis=1)
    se = errors.std(axis=1) / math.sqrt(n)
    for step, e, s in zip(steps, cv, se):
        step.cv_error, step.cv_se = float(e), float(s)
    kmin = int(np.argmin(cv))
    k = kmin
    if se_rule > 0:
        limit = cv[kmin] + se_rule * se[kmin]
        k = max(i for i in range(len(steps)) if cv[i] <= limit)
    out = tree.pruned(steps[k].leaves)
    out.prune_table = steps
    return out


def loo_prediction_mse(
    data: Dataset | Design,
    config: GrowConfig | None = None,
    folds: int = 10,
    se_rule: float = 0.0,
    seed: int = 0,
    method: str = "guide",
    univariate: bool = False,
) -> float:
    """Leave-one-out estimate of the summed prediction MSE of pruned trees.

    Each held-out unit is predicted by a cross-validation-pruned tree grown
    on the remaining units; squared errors are on the design's (possibly
    normalized) response scale and summed over responses.  With
    ``univariate=True`` one tree is fitted per response.
    """
    config = config or GrowConfig()
    if method == "baseline" and isinstance(data, Dataset):
        from .baseline import complete_responses

        data = complete_responses(data)
    design = as_design(data, config)
    n = design.n_units
    total = 0.0
    for i in range(n):
        train = np.delete(np.arange(n), i)
        sub = design.subset(train)
        test = np.array([i])
        if univariate:
            for k in range(sub.yn.shape[1]):
                t = cross_validate(single_response(sub, k), config, folds, se_rule, seed, method)
                pred = t.predict_coded(tuple(c[test] for c in design.x))[0, 0]
                yk = design.yn[i, k]
                if not np.isnan(yk):
                    center, spread = design.scale
                    total += float(((pred - center[k]) / spread[k] - yk) ** 2)
        else:
            t = cross_validate(sub, config, folds, se_rule, seed, method)
            total += float(_unit_errors(t, frozenset(n.id for n in t.terminals()), design, test)[0])
    return total / n


def single_response(design: Design, k: int) -> Design:
    """Design restricted to response column ``k`` (multiresponse only)."""
    center, spread = design.scale
    return replace(
        design,
        stats=design.stats[:, k : k + 1],
        y=design.y[:, k : k + 1],
        yn=design.yn[:, k : k + 1],
        scale=(center[k : k + 1], spread[k : k + 1]),
        response_names=(design.response_names[k],),
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


class ModelFormatError(ValueError):
    pass


def _rule_to_json(rule: SplitRule) -> dict:
    if isinstance(rule, NumericSplit):
        return {
            "type": "numeric",
            "var": rule.var,
            "threshold": rule.threshold,
            "missing_goes_left": rule.missing_goes_left,
            "all_missing_split": rule.all_missing_split,
        }
    return {
        "type": "categorical",
        "var": rule.var,
        "left_categories": sorted(rule.left_categories),
        "missing_in_left": rule.missing_in_left,
    }


def _rule_from_json(d: dict) -> SplitRule:
    if d["type"] == "numeric":
        return NumericSplit(
            d["var"], float(d["threshold"]), bool(d["missing_goes_left"]), bool(d["all_missing_split"])
        )
    if d["type"] == "categorical":
        return CategoricalSplit(d["var"], frozenset(d["left_categories"]), bool(d["missing_in_left"]))
    raise ModelFormatError(f"unknown rule type {d['type']!r}")


def _float(v: float):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)


def serialize(tree: Tree) -> str:
    nodes = []
    for n in tree.root.walk():
        entry: dict = {"id": n.id, "n": n.n, "sse": n.sse, "depth": n.depth}
        if n.rule is not None:
            entry["rule"] = _rule_to_json(n.rule)
            entry["left"] = n.left.id
            entry["right"] = n.right.id
        if n.mean is not None:
            entry["mean"] = [_float(v) for v in n.mean.tolist()]
        if n.curve is not None:
            entry["curve_knots"] = [list(k) for k in n.curve.knots]
        nodes.append(entry)
    roles = {
        name: ("categorical_predictor" if kind == "categorical" else "numeric_predictor")
        for name, kind in zip(tree.names, tree.kinds)
    }
    for r in tree.response_names:
        roles[r] = "response"
    if tree.time_name is not None:
        roles[tree.time_name] = "time"
    if tree.subject_name is not None:
        roles[tree.subject_name] = "subject_id"
    doc = {
        "version": FORMAT_VERSION,
        "layout": tree.layout,
        "method": tree.method,
        "roles": roles,
        "predictors": list(tree.names),
        "responses": list(tree.response_names),
        "categories": {
            name: list(c) for name, c in zip(tree.names, tree.categories) if c is not None
        },
        "config": {
            "min_node_size": tree.config.min_node_size,
            "max_depth": tree.config.max_depth,
            "missing_y_sign": tree.config.missing_y_sign,
            "normalize": tree.config.normalize,
            "span": tree.config.span,
            "robust_iters": tree.config.robust_iters,
            "intervals": tree.config.intervals,
        },
        "nodes": nodes,
    }
    if tree.scale is not None:
        doc["scale"] = {"center": tree.scale[0].tolist(), "spread": tree.scale[1].tolist()}
    return json.dumps(doc, indent=1)


def deserialize(text: str) -> Tree:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from None
    if not isinstance(doc, dict) or "version" not in doc:
        raise ModelFormatError("not a model document")
    if doc["version"] != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {doc['version']!r}")
    try:
        roles = doc["roles"]
        names = tuple(doc.get("predictors") or [n for n, r in roles.items() if r.endswith("predictor")])
        kinds = tuple(
            "categorical" if roles[n] == "categorical_predictor" else "numeric" for n in names
        )
        cats_doc = doc.get("categories", {})
        cats = tuple(tuple(cats_doc[n]) if n in cats_doc else None for n in names)
        responses = tuple(doc.get("responses") or [n for n, r in roles.items() if r == "response"])
        by_id = {}
        for e in doc["nodes"]:
            mean = e.get("mean")
            node = TreeNode(
                id=int(e["id"]),
                n=int(e["n"]),
                sse=float(e["sse"]),
                depth=int(e.get("depth", 0)),
                mean=None if mean is None else np.array([np.nan if v is None else v for v in mean], float),
                curve=None
                if "curve_knots" not in e
                else Curve(*map(np.array, zip(*e["curve_knots"]))),
                rule=_rule_from_json(e["rule"]) if "rule" in e else None,
            )
            by_id[node.id] = (node, e)
        for node, e in by_id.values():
            if node.rule is not None:
                node.left = by_id[int(e["left"])][0]
                node.right = by_id[int(e["right"])][0]
        root = by_id[int(doc["nodes"][0]["id"])][0]
        config = GrowConfig(**doc.get("config", {}))
        scale = None
        if "scale" in doc:
            scale = (np.array(doc["scale"]["center"], float), np.array(doc["scale"]["spread"], float))
        tree = Tree(doc["layout"], doc.get("method", "guide"), names, kinds, cats, responses, root, config, scale)
        tree.time_name = next((n for n, r in roles.items() if r == "time"), None)
        tree.subject_name = next((n for n, r in roles.items() if r == "subject_id"), None)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ModelFormatError(f"malformed model document: {exc!r}") from None
    for n in tree.root.walk():
        if n.is_terminal and n.mean is None and n.curve is None:
            raise ModelFormatError(f"terminal node {n.id} has no summary")
    return tree


# ---------------------------------------------------------------------------
# Text rendering
# ---------------------------------------------------------------------------


def _summary_text(tree: Tree, node: TreeNode) -> str:
    if node.curve is not None and tree.layout == "longitudinal":
        k = node.curve.knots
        return f"curve {k[0][1]:.4g} .. {k[-1][1]:.4g} over u in [{k[0][0]:.4g}, {k[-1][0]:.4g}]"
    return "(" + ", ".join(f"{v:.4g}" for v in node.mean) + ")"


def render_text(tree: Tree) -> str:
    """Indented text rendering: conditions, sample sizes and terminal predictions."""
    lines = []
    if tree.layout == "multiresponse":
        lines.append("Predicted values: (" + ", ".join(tree.response_names) + ")")

    def visit(node: TreeNode, indent: str, label: str):
        head = f"{indent}{label}node {node.id}"
        if node.is_terminal:
            lines.append(f"{head}: terminal, n = {node.n}, predicted {_summary_text(tree, node)}")
            return
        lines.append(f"{head}: n = {node.n}")
        visit(node.left, indent + "  ", f"[{node.rule.describe(True)}] ")
        visit(node.right, indent + "  ", f"[{node.rule.describe(False)}] ")

    visit(tree.root, "", "")
    return "\n".join(lines) + "\n"


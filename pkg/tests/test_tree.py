import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import multi_dataset
from mvguide.concrete import load_clone
from mvguide.dataset import Dataset
from mvguide.design import design_from_dataset
from mvguide.simharness import (
    ScenarioSpec,
    draw_predictors,
    gen_scenario,
    mse_experiment,
    trial_rng,
)
from mvguide.splitter import NumericSplit
from mvguide.tree import (
    GrowConfig,
    ModelFormatError,
    Tree,
    TreeNode,
    cross_validate,
    deserialize,
    grow,
    prune_sequence,
    serialize,
)

# -- growing -----------------------------------------------------------------------


def test_constant_response_gives_single_node(rng):
    ds = multi_dataset({"x": rng.normal(size=40)}, np.ones((40, 2)))
    assert grow(ds).n_leaves == 1


def test_small_sample_gives_single_node(rng):
    ds = multi_dataset({"x": np.arange(8.0)}, np.arange(8.0))
    tree = grow(ds)
    assert tree.n_leaves == 1
    assert tree.root.mean == pytest.approx([3.5])


def test_constant_predictors_give_single_node(rng):
    ds = multi_dataset({"x": np.ones(30)}, rng.normal(size=30))
    assert grow(ds).n_leaves == 1


def test_empty_dataset_is_an_error():
    with pytest.raises(ValueError):
        grow(multi_dataset({"x": np.empty(0)}, np.empty((0, 1))))


def test_depth_limit(rng):
    x = rng.uniform(size=200)
    ds = multi_dataset({"x": x}, np.sin(8 * x))
    tree = grow(ds, GrowConfig(max_depth=2))
    assert max(n.depth for n in tree.nodes()) <= 2
    assert tree.n_leaves <= 4


@given(st.integers(0, 10**6))
@settings(max_examples=15)
def test_children_partition_parents(seed):
    r = np.random.default_rng(seed)
    x = {"a": r.uniform(size=80), "b": r.normal(size=80)}
    x["b"][r.uniform(size=80) < 0.15] = np.nan
    x["c"] = r.choice(list("pqrs"), 80)
    ds = multi_dataset(x, r.normal(size=(80, 2)) + (x["a"] > 0.5)[:, None], categorical=("c",))
    tree = grow(ds, GrowConfig(min_node_size=6))
    for node in tree.nodes():
        if node.is_terminal:
            assert node.mean is not None
        else:
            both = np.concatenate([node.left.units, node.right.units])
            assert np.array_equal(np.sort(both), np.sort(node.units))
            assert node.left.units.size and node.right.units.size
    root = tree.root.sse
    full = tree.training_sse()
    for step in prune_sequence(tree):
        sse = tree.pruned(step.leaves).training_sse()
        assert full - 1e-9 <= sse <= root + 1e-9


def test_checkerboard_top_levels_use_the_pair():
    hits = 0
    for t in range(100):
        ds, _ = gen_scenario(ScenarioSpec("indep_uniform_3", 400), trial_rng(99, t))
        tree = grow(ds, GrowConfig(max_depth=2))
        top = [n.rule.var for n in tree.nodes() if n.depth <= 1 and not n.is_terminal]
        hits += len(top) == 3 and set(top) == {"X1", "X2"}
    assert hits >= 80


# -- pruning -------------------------------------------------------------------------


def _hand_tree(a_sse):
    """root(100) -> A(a_sse) -> leaves 10, 10; root -> leaf 40."""
    l1, l2 = TreeNode(4, 5, 10.0, 2, mean=np.zeros(1)), TreeNode(5, 5, 10.0, 2, mean=np.zeros(1))
    a = TreeNode(2, 10, a_sse, 1, mean=np.zeros(1), rule=NumericSplit("x", 0.0), left=l1, right=l2)
    b = TreeNode(3, 10, 40.0, 1, mean=np.zeros(1))
    root = TreeNode(1, 20, 100.0, 0, mean=np.zeros(1), rule=NumericSplit("x", 1.0), left=a, right=b)
    return Tree("multiresponse", "guide", ("x",), ("numeric",), (None,), ("y",), root)


def test_hand_pruning_weak_inner_branch():
    steps = prune_sequence(_hand_tree(25.0))
    # g(A) = (25 - 20) / 1 = 5, g(root) = (100 - 60) / 2 = 20 -> A goes first
    assert [s.alpha for s in steps] == pytest.approx([0.0, 5.0, 35.0])
    assert [s.n_leaves for s in steps] == [3, 2, 1]
    assert steps[1].leaves == frozenset({2, 3})
    assert [s.train_sse for s in steps] == pytest.approx([60.0, 65.0, 100.0])


def test_hand_pruning_root_weakest():
    steps = prune_sequence(_hand_tree(50.0))
    # g(A) = 30, g(root) = 20 -> the whole tree collapses at once
    assert [s.alpha for s in steps] == pytest.approx([0.0, 20.0])
    assert [s.n_leaves for s in steps] == [3, 1]


def test_single_node_sequence():
    root = TreeNode(1, 5, 3.0, mean=np.zeros(1))
    tree = Tree("multiresponse", "guide", ("x",), ("numeric",), (None,), ("y",), root)
    steps = prune_sequence(tree)
    assert len(steps) == 1 and steps[0].alpha == 0.0


def _reachable(tree, leaves):
    ids = {n.id for n in tree.nodes()}
    # every leaf id's ancestors (id // 2 ...) are internal and not leaves
    for leaf in leaves:
        k = leaf // 2
        while k >= 1:
            assert k in ids and k not in leaves
            k //= 2
    return True


@given(st.integers(0, 10**6))
@settings(max_examples=20)
def test_prune_sequence_is_nested_and_monotone(seed):
    r = np.random.default_rng(seed)
    x = {"a": r.uniform(size=120), "b": r.uniform(size=120)}
    ds = multi_dataset(x, r.normal(size=(120, 2)) + 2 * (x["a"] > 0.3)[:, None])
    tree = grow(ds, GrowConfig(min_node_size=5))
    steps = prune_sequence(tree)
    assert steps[0].alpha == 0.0 and steps[-1].n_leaves == 1
    assert all(a.alpha < b.alpha for a, b in zip(steps, steps[1:]))
    assert all(a.n_leaves > b.n_leaves for a, b in zip(steps, steps[1:]))
    for a, b in zip(steps, steps[1:]):
        # each later leaf is an ancestor of, or equal to, some earlier leaf
        for leaf in a.leaves:
            k = leaf
            while k not in b.leaves:
                k //= 2
                assert k >= 1
        assert _reachable(tree, b.leaves)


def test_noise_is_pruned_to_the_root():
    roots = 0
    for t in range(50):
        r = trial_rng(5, t)
        ds = multi_dataset({f"x{i}": r.uniform(size=100) for i in range(5)}, r.normal(size=(100, 3)))
        roots += cross_validate(ds, seed=t).n_leaves == 1
    assert roots >= 35


def test_cross_validation_records_the_sequence(rng):
    x = rng.uniform(size=150)
    ds = multi_dataset({"x": x, "z": rng.uniform(size=150)}, np.column_stack([3 * (x > 0.5), x]) + rng.normal(size=(150, 2)))
    tree = cross_validate(ds, folds=5, seed=1)
    table = tree.prune_table
    assert all(not math.isnan(s.cv_error) for s in table)
    best = min(table, key=lambda s: s.cv_error)
    assert tree.n_leaves == best.n_leaves
    assert tree.root.rule.var == "x"
    one_se = cross_validate(ds, folds=5, seed=1, se_rule=1.0)
    assert one_se.n_leaves <= tree.n_leaves


def test_cross_validation_is_deterministic(rng):
    ds, _ = gen_scenario(ScenarioSpec("indep_uniform_1", 100), rng)
    a = serialize(cross_validate(ds, seed=3))
    b = serialize(cross_validate(ds, seed=3))
    assert a == b


def test_cross_validation_needs_two_folds(rng):
    ds = multi_dataset({"x": rng.normal(size=20)}, rng.normal(size=20))
    with pytest.raises(ValueError):
        cross_validate(ds, folds=1)


# -- prediction -------------------------------------------------------------------------


def test_single_node_predicts_root_mean(rng):
    y = rng.normal(size=(5, 2))
    tree = grow(multi_dataset({"x": np.arange(5.0)}, y))
    np.testing.assert_allclose(tree.predict({"x": 100.0}), y.mean(axis=0))
    np.testing.assert_allclose(tree.predict({"x": None}), y.mean(axis=0))


def test_value_on_threshold_goes_left():
    ds = multi_dataset({"x": np.repeat([1.0, 2.0, 3.0, 4.0], 5)}, np.repeat([0.0, 0.0, 10.0, 10.0], 5))
    tree = grow(ds, GrowConfig(max_depth=1))
    assert tree.root.rule.threshold == 2.5
    assert tree.predict({"x": 2.5}) == pytest.approx([0.0])
    assert tree.predict({"x": 2.6}) == pytest.approx([10.0])


def test_predict_needs_every_predictor(rng):
    tree = grow(multi_dataset({"x": np.arange(5.0), "z": np.arange(5.0)}, np.arange(5.0)))
    with pytest.raises(ValueError):
        tree.predict({"x": 1.0})


def test_duplicate_rows_do_not_change_routing(rng):
    x = rng.uniform(size=60)
    y = 5 * (x > 0.4) + rng.normal(0, 0.1, 60)
    tree = grow(multi_dataset({"x": x}, y), GrowConfig(max_depth=1))
    dup = grow(multi_dataset({"x": np.tile(x, 2)}, np.tile(y, 2)), GrowConfig(max_depth=1))
    assert tree.root.rule == dup.root.rule


def test_tree_predictions_reproduce_harness_mse():
    spec = ScenarioSpec("indep_uniform_1", 100, seed=4)
    rep = mse_experiment(spec, 2, ("multivariate",), folds=5)
    for t in range(2):
        rng = trial_rng(4, t)
        ds, truth = gen_scenario(spec, rng)
        cv_seed = int(rng.integers(0, 2**31 - 1))
        xtest = draw_predictors(spec.kind, 100, rng)
        tree = cross_validate(ds, GrowConfig(), 5, 0.0, cv_seed)
        pred = np.array([tree.predict({f"X{i + 1}": v for i, v in enumerate(row)}) for row in xtest])
        mse = ((pred - truth(xtest)) ** 2).sum() / 100
        assert mse == pytest.approx(rep.results["multivariate"].mse[t], rel=1e-12)


# -- serialization ------------------------------------------------------------------------


def test_round_trip_on_concrete_clone():
    ds = load_clone()
    tree = cross_validate(ds, GrowConfig(normalize=True), seed=2)
    back = deserialize(serialize(tree))
    np.testing.assert_array_equal(tree.predict_dataset(ds), back.predict_dataset(ds))
    assert back.to_text() == tree.to_text()


def test_round_trip_with_categories_and_missing(rng):
    x = {"a": rng.uniform(size=100), "c": rng.choice(list("abc"), 100).astype(object)}
    x["c"][::9] = None
    x["a"][::7] = np.nan
    y = rng.normal(size=(100, 2)) + 3 * (x["c"] == "a")[:, None]
    ds = multi_dataset(x, y, categorical=("c",))
    tree = grow(ds, GrowConfig(min_node_size=8))
    back = deserialize(serialize(tree))
    np.testing.assert_array_equal(tree.predict_dataset(ds), back.predict_dataset(ds))


def test_hand_written_model():
    doc = {
        "version": 1,
        "layout": "multiresponse",
        "roles": {"x": "numeric_predictor", "y": "response"},
        "nodes": [
            {"id": 1, "n": 4, "sse": 1.0, "rule": {"type": "numeric", "var": "x", "threshold": 0.5,
             "missing_goes_left": True, "all_missing_split": False}, "left": 2, "right": 3},
            {"id": 2, "n": 2, "sse": 0.0, "mean": [-1.0]},
            {"id": 3, "n": 2, "sse": 0.0, "mean": [1.0]},
        ],
    }
    tree = deserialize(json.dumps(doc))
    assert tree.predict({"x": 0.0}) == pytest.approx([-1.0])
    assert tree.predict({"x": 1.0}) == pytest.approx([1.0])
    assert tree.predict({"x": None}) == pytest.approx([-1.0])


def test_truncated_document(rng):
    tree = grow(multi_dataset({"x": rng.normal(size=30)}, rng.normal(size=30)))
    text = serialize(tree)
    with pytest.raises(ModelFormatError):
        deserialize(text[: len(text) // 2])


def test_version_mismatch(rng):
    tree = grow(multi_dataset({"x": rng.normal(size=30)}, rng.normal(size=30)))
    doc = json.loads(serialize(tree))
    doc["version"] = 99
    with pytest.raises(ModelFormatError, match="version"):
        deserialize(json.dumps(doc))


def test_missing_summary_is_rejected():
    doc = {"version": 1, "layout": "multiresponse", "roles": {"x": "numeric_predictor", "y": "response"},
           "nodes": [{"id": 1, "n": 1, "sse": 0.0}]}
    with pytest.raises(ModelFormatError):
        deserialize(json.dumps(doc))


# -- longitudinal ----------------------------------------------------------------------------


def _long_data(seed, n=60):
    ds, truth = gen_scenario(ScenarioSpec("long_step", n, seed=seed))
    return ds, truth


def test_longitudinal_tree_finds_the_step():
    ds, _ = _long_data(1, 100)
    tree = cross_validate(ds, seed=0)
    assert tree.root.rule.var == "X1"
    assert abs(tree.root.rule.threshold) < 0.2
    for leaf in tree.terminals():
        assert leaf.curve is not None


def test_longitudinal_round_trip_and_prediction():
    ds, _ = _long_data(2)
    tree = grow(ds)
    back = deserialize(serialize(tree))
    np.testing.assert_array_equal(tree.predict_dataset(ds), back.predict_dataset(ds))
    with pytest.raises(ValueError):
        tree.predict({f"X{i}": 0.0 for i in range(1, 6)})


def test_longitudinal_folds_split_subjects():
    ds, _ = _long_data(3, 40)
    design = design_from_dataset(ds)
    assert design.n_units == 40
    tree = cross_validate(design, folds=4, seed=1)
    assert tree.root.n == 40

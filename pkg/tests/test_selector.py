import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import multi_dataset
from mvguide.dataset import SubjectSeries
from mvguide.design import design_from_dataset
from mvguide.selector import (
    NoSplit,
    SignMatrix,
    group_numeric,
    interaction_pvalue,
    interaction_threshold,
    main_effect_pvalue,
    main_threshold,
    select_split_variable,
    sign_vectors_long,
    sign_vectors_multi,
)
from mvguide.simharness import ScenarioSpec, gen_scenario, trial_rng
from mvguide.stats import Curve, chisq_test

TABLE2 = np.array(
    [
        [5, 16, 0, 0, 1, 4, 6, 2],
        [6, 2, 1, 0, 4, 1, 14, 13],
        [3, 2, 1, 1, 0, 0, 13, 8],
    ]
)


def _design(x, y, categorical=()):
    return design_from_dataset(multi_dataset(x, y, categorical))


def _all(design):
    return np.arange(design.n_units)


# -- sign vectors -----------------------------------------------------------


def test_signs_above_and_below_mean():
    d = _design({"x": [0.0, 1.0]}, [[1, 1], [3, 3]])
    np.testing.assert_array_equal(sign_vectors_multi(d, _all(d)).z, [[-1, -1], [1, 1]])


def test_value_at_the_mean_is_minus():
    d = _design({"x": [0.0, 1.0, 2.0]}, [1.0, 2.0, 3.0])
    assert sign_vectors_multi(d, _all(d)).z[:, 0].tolist() == [-1, -1, 1]


@pytest.mark.parametrize("sign", [-1, 1])
def test_missing_response_takes_the_chosen_sign(sign):
    d = _design({"x": [0.0, 1.0, 2.0]}, [[5, 1], [0, np.nan], [1, 3]])
    z = sign_vectors_multi(d, _all(d), missing_y_sign=sign).z
    assert z[1, 1] == sign
    assert z[0, 0] == 1


def test_all_missing_response_in_node_is_an_error():
    d = _design({"x": [0.0, 1.0, 2.0]}, [[1, np.nan], [2, np.nan], [3, 4]])
    with pytest.raises(ValueError):
        sign_vectors_multi(d, np.array([0, 1]))


def _series_from_pattern(pattern, sid, above=1.0):
    """Three intervals over [0, 3); one observation per occupied interval."""
    u, y = [], []
    for k, s in enumerate(pattern):
        if s == 0:
            continue
        u.append(k + 0.5)
        y.append(above if s > 0 else -above)
    return SubjectSeries(sid, {}, np.array(u), np.array(y))


def test_eight_trajectory_patterns_round_trip():
    flat = Curve(np.array([0.0, 3.0]), np.array([0.0, 0.0]))
    patterns = list(itertools.product([-1, 1], repeat=3))
    series = [_series_from_pattern(p, str(i)) for i, p in enumerate(patterns)]
    # anchor the pooled time range to [0, 3]
    series.append(SubjectSeries("lo", {}, np.array([0.0, 3.0]), np.array([-1.0, -1.0])))
    z = sign_vectors_long(series, flat, 3).z
    np.testing.assert_array_equal(z[:8], patterns)


def test_empty_interval_gives_minus():
    flat = Curve(np.array([0.0]), np.array([0.0]))
    series = [SubjectSeries("a", {}, np.array([0.1, 2.9]), np.array([5.0, 5.0]))]
    assert sign_vectors_long(series, flat, 3).z.tolist() == [[1, -1, 1]]


def test_equal_counts_above_and_below_give_plus():
    flat = Curve(np.array([0.0]), np.array([0.0]))
    s = SubjectSeries("a", {}, np.array([0.0, 0.5, 1.0]), np.array([1.0, 0.0, 1.0]))
    # interval 1 holds one above and one on the curve
    assert sign_vectors_long([s], flat, 2).z.tolist() == [[1, 1]]


def test_long_signs_need_subjects():
    with pytest.raises(ValueError):
        sign_vectors_long([], Curve(np.array([0.0]), np.array([0.0])), 3)


# -- grouping -----------------------------------------------------------------


def _standardized(n, rng):
    x = rng.normal(size=n)
    return (x - x.mean()) / x.std(ddof=1)


def test_three_groups_for_small_nodes(rng):
    g = group_numeric(_standardized(50, rng), 50, 3)
    np.testing.assert_allclose(g.cuts, [-0.57735, 0.57735], atol=1e-5)
    assert g.n_groups == 3 and g.missing_group is None


def test_four_groups_for_large_nodes(rng):
    g = group_numeric(_standardized(200, rng), 200, 3)
    np.testing.assert_allclose(g.cuts, [-0.866025, 0.0, 0.866025], atol=1e-6)
    assert g.n_groups == 4


def test_constant_predictor_forms_one_group():
    g = group_numeric(np.array([2.0, 2.0, np.nan]), 3, 2)
    assert g.n_groups == 2
    assert g.groups.tolist() == [0, 0, 1]


def test_intervals_closed_on_the_right():
    x = np.array([-1.0, 0.0, 1.0])  # s = 1, cuts +-0.577
    g = group_numeric(x, 3, 1)
    assert g.groups.tolist() == [0, 1, 2]
    cut = g.cuts[1]
    g2 = group_numeric(np.array([-1.0, 0.0, 1.0, cut]), 3, 1)
    assert g2.groups[3] == g2.groups[1]


@given(st.lists(st.one_of(st.none(), st.floats(-1e3, 1e3)), min_size=1, max_size=60), st.integers(1, 4))
def test_every_value_gets_exactly_one_group(vals, d):
    x = np.array([np.nan if v is None else v for v in vals])
    if np.isnan(x).all():
        return
    g = group_numeric(x, x.size, d)
    assert g.groups.shape == x.shape
    assert ((g.groups >= 0) & (g.groups < g.n_groups)).all()
    assert (g.missing_group is not None) == bool(np.isnan(x).any())
    assert set(g.groups.tolist()) == set(range(g.n_groups))


# -- tests --------------------------------------------------------------------


def _table2_design():
    """Rows that reproduce the 3 x 8 count table at the root."""
    patterns = list(itertools.product([-1.0, 1.0], repeat=3))
    x, y = [], []
    for g, row in enumerate(TABLE2):
        for pat, c in zip(patterns, row):
            x += [(-10.0, 0.0, 10.0)[g]] * c
            y += [pat] * c
    return _design({"water": x}, np.array(y))


def test_table2_counts_give_the_reported_pvalue():
    assert chisq_test(TABLE2) == pytest.approx(8.1e-5, rel=0.05)


def test_pipeline_reproduces_table2():
    d = _table2_design()
    z = sign_vectors_multi(d, _all(d))
    assert main_effect_pvalue(d, _all(d), z, "water") == pytest.approx(chisq_test(TABLE2), rel=1e-12)


def test_single_group_gives_p_one():
    d = _design({"x": [1.0] * 6}, [1, 2, 3, 4, 5, 6])
    z = sign_vectors_multi(d, _all(d))
    assert main_effect_pvalue(d, _all(d), z, "x") == 1.0


def test_binary_by_constant_interaction_is_one():
    d = _design({"c": ["a", "b"] * 5, "k": [3.0] * 10}, np.arange(10.0), categorical=("c",))
    z = sign_vectors_multi(d, _all(d))
    assert interaction_pvalue(d, _all(d), z, "c", "k") == 1.0


def test_interaction_missing_values_pool_into_one_row():
    x1 = np.array([-1, -1, 1, 1, np.nan, -1, 1, np.nan] * 4, float)
    x2 = np.array([-1, 1, -1, 1, 1, np.nan, np.nan, -1] * 4, float)
    y = np.where(np.nan_to_num(x1) * np.nan_to_num(x2) > 0, 1.0, 0.0)
    d = _design({"x1": x1, "x2": x2}, y)
    z = sign_vectors_multi(d, _all(d))
    # 4 complete cells plus one missing row, by 2 patterns
    miss = np.isnan(x1) | np.isnan(x2)
    cell = np.where(miss, 4, (np.nan_to_num(x1) > 0) * 2 + (np.nan_to_num(x2) > 0))
    table = np.zeros((5, 2))
    np.add.at(table, (cell.astype(int), (z.z[:, 0] > 0).astype(int)), 1)
    assert interaction_pvalue(d, _all(d), z, "x1", "x2") == pytest.approx(chisq_test(table))


def test_interaction_needs_distinct_variables():
    d = _design({"a": [1.0, 2.0], "b": [1.0, 2.0]}, [1.0, 2.0])
    with pytest.raises(ValueError):
        interaction_pvalue(d, _all(d), sign_vectors_multi(d, _all(d)), "a", "a")


def test_null_interaction_pvalues_are_calibrated():
    hits = 0
    for t in range(200):
        r = trial_rng(7, t)
        d = _design({"a": r.uniform(size=500), "b": r.uniform(size=500)}, r.normal(size=(500, 2)))
        z = sign_vectors_multi(d, _all(d))
        hits += interaction_pvalue(d, _all(d), z, "a", "b") < 0.05
    assert 0.01 <= hits / 200 <= 0.10


def test_checkerboard_interaction_beats_main_effects():
    wins = 0
    for t in range(100):
        ds, _ = gen_scenario(ScenarioSpec("indep_uniform_3", 100), trial_rng(11, t))
        d = design_from_dataset(ds)
        u = _all(d)
        z = sign_vectors_multi(d, u)
        pi = interaction_pvalue(d, u, z, "X1", "X2")
        pm = min(main_effect_pvalue(d, u, z, v) for v in d.names)
        wins += pi < pm
    assert wins > 50


# -- selection ------------------------------------------------------------------


def test_thresholds():
    assert main_threshold(3) == pytest.approx(0.016667, abs=1e-6)
    assert interaction_threshold(3) == pytest.approx(0.008333, abs=1e-6)
    assert interaction_threshold(1) == 0.05


def test_quadratic_example_selects_x1():
    # 2x2 layout of Table 1: x1 groups carry the signal, x2 does not
    left = [[5, 17], [16, 12], [17, 10], [6, 17]]
    right = [[9, 16], [14, 11], [9, 16], [12, 13]]
    x1, x2, y = [], [], []
    levels = (-1.5, -0.5, 0.5, 1.5)
    for g, (neg, pos) in enumerate(left):
        x1 += [levels[g]] * (neg + pos)
        y += [-1.0] * neg + [1.0] * pos
    y = np.array(y)
    # x2 assigned so that its grouping reproduces the right panel
    x2 = np.empty(y.size)
    for g, (neg, pos) in enumerate(right):
        x2[np.flatnonzero(y < 0)[sum(r[0] for r in right[:g]) :][:neg]] = levels[g]
        x2[np.flatnonzero(y > 0)[sum(r[1] for r in right[:g]) :][:pos]] = levels[g]
    d = _design({"X1": x1, "X2": x2}, y)
    u = _all(d)
    z = sign_vectors_multi(d, u)
    assert chisq_test(np.array(left)) < chisq_test(np.array(right))
    sel = select_split_variable(d, u, z)
    assert sel.variable == "X1"


def test_selection_falls_back_to_smallest_main_effect(rng):
    d = _design({"a": rng.uniform(size=60), "b": rng.uniform(size=60)}, rng.normal(size=60))
    u = _all(d)
    sel = select_split_variable(d, u, sign_vectors_multi(d, u))
    assert sel.chosen_p == pytest.approx(min(sel.p_values.values())) or sel.kind == "interaction"


def test_all_constant_predictors_raise():
    d = _design({"a": [1.0] * 5}, np.arange(5.0))
    with pytest.raises(NoSplit):
        select_split_variable(d, _all(d), sign_vectors_multi(d, _all(d)))


def test_main_effect_selection_reports_minimum(rng):
    x = rng.uniform(size=200)
    d = _design({"noise": rng.uniform(size=200), "x": x}, (x > 0.5) * 3 + rng.normal(size=200))
    u = _all(d)
    sel = select_split_variable(d, u, sign_vectors_multi(d, u))
    assert sel.kind == "main_effect" and sel.variable == "x"
    assert sel.chosen_p == min(sel.p_values.values())


def test_batched_selection_matches_single_tests(rng):
    x = {f"v{i}": rng.normal(size=80) for i in range(4)}
    x["v1"][rng.uniform(size=80) < 0.2] = np.nan
    x["c"] = rng.choice(list("abcde"), 80)
    d = _design(x, rng.normal(size=(80, 3)), categorical=("c",))
    u = _all(d)
    z = sign_vectors_multi(d, u)
    sel = select_split_variable(d, u, z)
    for name, p in sel.p_values.items():
        assert p == pytest.approx(main_effect_pvalue(d, u, z, name), rel=1e-12)
    for (a, b), p in sel.interaction_p.items():
        assert p == pytest.approx(interaction_pvalue(d, u, z, a, b), rel=1e-12)


# -- invariances ------------------------------------------------------------------


def _noise_case(seed, n=90):
    r = np.random.default_rng(seed)
    x = {"a": r.uniform(size=n), "b": r.normal(size=n), "c": r.integers(0, 4, n).astype(float)}
    y = np.column_stack([x["a"] + r.normal(size=n), r.normal(size=n)])
    return x, y


@given(st.integers(0, 10**6), st.floats(0.01, 100), st.floats(-100, 100))
def test_affine_response_invariance(seed, a, b):
    x, y = _noise_case(seed)
    d1 = _design(x, y)
    d2 = _design(x, a * y + b)
    u = _all(d1)
    z1, z2 = sign_vectors_multi(d1, u), sign_vectors_multi(d2, u)
    np.testing.assert_array_equal(z1.z, z2.z)
    s1, s2 = select_split_variable(d1, u, z1), select_split_variable(d2, u, z2)
    assert s1.variables == s2.variables
    assert s1.p_values == pytest.approx(s2.p_values, rel=1e-9)


@given(st.integers(0, 10**6), st.floats(0.01, 100), st.floats(-100, 100))
def test_predictor_affine_invariance(seed, a, b):
    x, y = _noise_case(seed)
    x2 = {k: (a * v + b if k == "b" else v) for k, v in x.items()}
    d1, d2 = _design(x, y), _design(x2, y)
    u = _all(d1)
    z = sign_vectors_multi(d1, u)
    p1 = main_effect_pvalue(d1, u, z, "b")
    p2 = main_effect_pvalue(d2, u, z, "b")
    assert p1 == pytest.approx(p2, rel=1e-9)


@given(st.integers(0, 10**6), st.permutations(["a", "b", "c"]))
def test_column_order_permutes_pvalues(seed, order):
    x, y = _noise_case(seed)
    d1 = _design(x, y)
    d2 = _design({k: x[k] for k in order}, y)
    u = _all(d1)
    s1 = select_split_variable(d1, u, sign_vectors_multi(d1, u))
    s2 = select_split_variable(d2, u, sign_vectors_multi(d2, u))
    assert s1.p_values == pytest.approx(s2.p_values, rel=1e-12)
    if len(set(s1.p_values.values())) == len(s1.p_values):
        assert set(s1.variables) == set(s2.variables)


def test_sign_matrix_entries(rng):
    d = _design({"x": rng.normal(size=30)}, rng.normal(size=(30, 4)))
    z = sign_vectors_multi(d, _all(d))
    assert isinstance(z, SignMatrix) and z.d == 4
    assert set(np.unique(z.z).tolist()) <= {-1, 1}

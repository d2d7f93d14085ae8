"""Seeded Monte-Carlo experiments: root-split selection frequencies and MSE studies.

Every trial draws from its own counter-based stream keyed by
``(seed, trial)``, so results do not depend on trial order or on the
number of worker processes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import Column, Dataset
from .design import Design, design_from_dataset
from .tree import GrowConfig, cross_validate, guide_finder, single_response, TreeNode

MULTI_KINDS = (
    "indep_uniform_1",
    "indep_uniform_2",
    "indep_uniform_3",
    "corr_normal_1",
    "corr_normal_2",
    "corr_normal_3",
)
LONG_KINDS = ("long_linear", "long_step")
KINDS = MULTI_KINDS + LONG_KINDS
NOISE_SD = 0.5
N_TIMES = 10
GRID_LEVELS = (-5 / 6, -1 / 2, -1 / 6, 1 / 6, 1 / 2, 5 / 6)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trial])))


def covariance_v(r: float = 0.5) -> np.ndarray:
    """Block covariance: (X1, X3, X4) and (X2, X5, X6) each equicorrelated at ``r``."""
    v = np.eye(6)
    for block in ((0, 2, 3), (1, 4, 5)):
        for i in block:
            for j in block:
                if i != j:
                    v[i, j] = r
    return v


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    n: int
    seed: int = 0
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def longitudinal(self) -> bool:
        return self.kind in LONG_KINDS

    @property
    def equation(self) -> int:
        return int(self.kind[-1]) if not self.longitudinal else 0


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def draw_predictors(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if kind.startswith("indep"):
        return rng.uniform(-0.5, 0.5, (n, 7))
    if kind.startswith("corr"):
        x = rng.multivariate_normal(np.zeros(6), covariance_v(), n, method="cholesky")
        return np.column_stack([x, rng.uniform(-0.5, 0.5, n)])
    return rng.uniform(-1.0, 1.0, (n, 5))


def mean_function(kind: str) -> Callable:
    """True conditional mean; ``f(x)`` is (n, 3) for multiresponse kinds, ``f(x, u)`` otherwise."""
    if kind.endswith("_1") and kind in MULTI_KINDS:
        return lambda x: x[:, :3].copy()
    if kind.endswith("_2"):
        return lambda x: np.repeat((x[:, 0] + x[:, 1])[:, None], 3, axis=1)
    if kind.endswith("_3"):

        def interaction(x):
            pos = (x[:, 0] * x[:, 1] > 0)[:, None]
            return np.where(pos, [1.0, -1.0, 0.0], [0.0, 0.0, 1.0])

        return interaction
    if kind == "long_linear":
        return lambda x, u: 1 + x[:, 0] + x[:, 1] + 2 * x[:, 0] * x[:, 1] + 0.5 * u
    if kind == "long_step":
        return lambda x, u: 2.5 * (x[:, 0] <= 0) + 0.5 * u
    raise ValueError(kind)


def gen_scenario(spec: ScenarioSpec, rng: np.random.Generator | None = None):
    """Draw a training set and return ``(dataset, truth)``."""
    rng = rng if rng is not None else trial_rng(spec.seed, 0)
    x = draw_predictors(spec.kind, spec.n, rng)
    truth = mean_function(spec.kind)
    names = [f"X{i + 1}" for i in range(x.shape[1])]
    if not spec.longitudinal:
        mu = truth(x)
        y = mu + spec.noise_scale * rng.normal(0.0, NOISE_SD, mu.shape)
        data = {nm: x[:, i] for i, nm in enumerate(names)}
        roles = {nm: "numeric_predictor" for nm in names}
        for k in range(3):
            data[f"Y{k + 1}"] = y[:, k]
            roles[f"Y{k + 1}"] = "response"
        return Dataset.from_arrays(data, roles), truth
    u = np.arange(1, N_TIMES + 1, dtype=float)
    b0 = rng.normal(0.0, 0.5, spec.n)
    b1 = rng.normal(0.0, 0.25, spec.n)
    eps = rng.normal(0.0, 1.0, (spec.n, N_TIMES))
    mu = np.column_stack([truth(x, t) for t in u])
    y = mu + spec.noise_scale * (b0[:, None] + b1[:, None] * u[None, :] + eps)
    return longitudinal_dataset(x, u, y, names), truth


def longitudinal_dataset(x: np.ndarray, u: np.ndarray, y: np.ndarray, names) -> Dataset:
    n, t = y.shape
    cols = [
        Column("id", "subject_id", np.repeat(np.arange(n), t).astype(float), tuple(str(i) for i in range(n))),
        Column("time", "time", np.tile(u, n)),
        Column("y", "response", y.ravel()),
    ]
    cols += [Column(nm, "numeric_predictor", np.repeat(x[:, i], t)) for i, nm in enumerate(names)]
    return Dataset(tuple(cols), "longitudinal")


# ---------------------------------------------------------------------------
# Selection-bias experiment
# ---------------------------------------------------------------------------


@dataclass
class BiasReport:
    method: str
    trials: int
    names: tuple[str, ...]
    counts: dict[str, int]
    none_count: int = 0

    @property
    def null_probability(self) -> float:
        return 1.0 / len(self.names)

    def frequency(self, name: str) -> float:
        return self.counts[name] / self.trials

    def se(self, name: str) -> float:
        f = self.frequency(name)
        return math.sqrt(f * (1 - f) / self.trials)

    @property
    def null_se(self) -> float:
        p = self.null_probability
        return math.sqrt(p * (1 - p) / self.trials)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variable", "count", "frequency", "se", "null_frequency"])
        for nm in self.names:
            w.writerow([nm, self.counts[nm], f"{self.frequency(nm):.6f}", f"{self.se(nm):.6f}", f"{self.null_probability:.6f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"root-split selection frequencies ({self.method}, {self.trials} trials)"]
        lines.append(f"{'variable':<12}{'freq':>8}{'se':>8}")
        for nm in self.names:
            lines.append(f"{nm:<12}{self.frequency(nm):>8.3f}{self.se(nm):>8.3f}")
        lines.append(f"unbiased level {self.null_probability:.3f}")
        if self.none_count:
            lines.append(f"no split in {self.none_count} trials")
        return "\n".join(lines) + "\n"


def _multinomial_column(name: str, k: int, n: int, rng) -> Column:
    labels = tuple(str(i + 1) for i in range(k))
    return Column(name, "categorical_predictor", rng.integers(0, k, n).astype(float), labels)


def _bias_trial(ds: Dataset, trial: int, seed: int, method: str, augment, missing) -> str | None:
    rng = trial_rng(seed, trial)
    n = ds.n_rows
    boot = ds.take(rng.integers(0, n, n))
    cols = []
    for c in boot.columns:
        if c.role.endswith("predictor"):
            c = Column(c.name, c.role, c.values[rng.permutation(n)], c.categories)
        cols.append(c)
    for k in augment:
        cols.append(_multinomial_column(f"C{k}", k, n, rng))
    if missing is not None:
        var, frac = missing
        hole = rng.choice(n, int(round(frac * n)), replace=False)
        for i, c in enumerate(cols):
            if c.name == var:
                vals = c.values.copy()
                vals[hole] = np.nan
                cols[i] = Column(c.name, c.role, vals, c.categories)
    design = design_from_dataset(Dataset(tuple(cols), ds.layout))
    return root_split_variable(design, method)


def root_split_variable(design: Design, method: str = "guide") -> str | None:
    """Variable the method uses to split the root node (``None`` if it does not split)."""
    units = np.arange(design.n_units)
    if method == "guide":
        node = TreeNode(1, design.n_units, 0.0)
        found = guide_finder(design, units, GrowConfig(), node)
        return None if found is None else found[0].var
    if method == "baseline":
        from .baseline import Unsplittable, cart_best_split

        try:
            return cart_best_split(design, units)[0].var
        except Unsplittable:
            return None
    raise ValueError(f"unknown method {method!r}")


def _run(fn, args_list, threads: int):
    if threads == 1 or len(args_list) < 2:
        return [fn(*a) for a in args_list]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=threads)(delayed(fn)(*a) for a in args_list)


def bias_experiment(
    ds: Dataset,
    trials: int,
    seed: int = 0,
    method: str = "guide",
    augment: Sequence[int] = (),
    missing: tuple[str, float] | None = None,
    threads: int = 1,
) -> BiasReport:
    """Tally root-split variables over bootstrap samples with permuted predictors.

    Each trial resamples rows with replacement, permutes every predictor
    column independently (breaking any link with the responses), appends
    one equiprobable categorical column per entry of ``augment`` (its number
    of categories), and optionally blanks a fraction of one variable.
    """
    if ds.layout != "multiresponse":
        raise ValueError("bias experiments need a multiresponse dataset")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if method == "baseline":
        from .baseline import complete_responses

        ds = complete_responses(ds)
    names = tuple(c.name for c in ds.predictors) + tuple(f"C{k}" for k in augment)
    args = [(ds, t, seed, method, tuple(augment), missing) for t in range(trials)]
    picks = _run(_bias_trial, args, threads)
    counts = {nm: 0 for nm in names}
    none = 0
    for p in picks:
        if p is None:
            none += 1
        else:
            counts[p] += 1
    return BiasReport(method, trials, names, counts, none)


# ---------------------------------------------------------------------------
# MSE experiment
# ---------------------------------------------------------------------------

MULTI_METHODS = ("univariate", "multivariate", "baseline")


@dataclass
class MethodResult:
    mse: np.ndarray
    nodes: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.mse.mean())

    @property
    def se(self) -> float:
        return float(self.mse.std(ddof=1) / math.sqrt(self.mse.size)) if self.mse.size > 1 else math.nan

    @property
    def mean_nodes(self) -> float:
        return float(self.nodes.mean())


@dataclass
class MseReport:
    spec: ScenarioSpec
    trials: int
    results: dict[str, MethodResult] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "method", "mse", "se", "mean_terminal_nodes", "trials"])
        for m, r in self.results.items():
            w.writerow([self.spec.kind, m, f"{r.mean:.6f}", f"{r.se:.6f}", f"{r.mean_nodes:.3f}", self.trials])
        return buf.getvalue()

    def to_text(self) -> str:
        scale = 1.0 if self.spec.longitudinal else 100.0
        label = "MSE" if scale == 1.0 else "MSE x 100"
        lines = [f"{self.spec.kind}, n = {self.spec.n}, {self.trials} trials"]
        lines.append(f"{'method':<14}{label:>12}{'se':>9}{'nodes':>8}")
        for m, r in self.results.items():
            lines.append(f"{m:<14}{scale * r.mean:>12.3f}{scale * r.se:>9.3f}{r.mean_nodes:>8.2f}")
        return "\n".join(lines) + "\n"


def longitudinal_grid() -> np.ndarray:
    """The 6^5 grid of predictor points used to score longitudinal fits."""
    g = np.meshgrid(*([np.array(GRID_LEVELS)] * 5), indexing="ij")
    return np.column_stack([a.ravel() for a in g])


def _mse_trial(spec: ScenarioSpec, trial: int, methods, config: GrowConfig, folds: int, se_rule: float, test_size: int):
    rng = trial_rng(spec.seed, trial)
    ds, truth = gen_scenario(spec, rng)
    cv_seed = int(rng.integers(0, 2**31 - 1))
    out = {}
    if spec.longitudinal:
        grid = longitudinal_grid()
        cols = tuple(grid[:, i] for i in range(grid.shape[1]))
        tree = cross_validate(ds, config, folds, se_rule, cv_seed)
        ids = tree.leaf_ids(cols)
        by_id = {n.id: n for n in tree.terminals()}
        sq = 0.0
        for u in range(1, N_TIMES + 1):
            pred = np.empty(len(grid))
            for nid in np.unique(ids):
                pred[ids == nid] = by_id[nid].curve(float(u))
            sq += float(((pred - truth(grid, float(u))) ** 2).sum())
        out["guide"] = (sq / (N_TIMES * len(grid)), tree.n_leaves)
        return out
    xtest = draw_predictors(spec.kind, test_size, rng)
    mu = truth(xtest)
    cols = tuple(xtest[:, i] for i in range(xtest.shape[1]))
    design = design_from_dataset(ds, normalize=config.normalize)
    for m in methods:
        if m == "univariate":
            pred = np.empty_like(mu)
            leaves = 0
            for k in range(mu.shape[1]):
                t = cross_validate(single_response(design, k), config, folds, se_rule, cv_seed)
                pred[:, k] = t.predict_coded(cols)[:, 0]
                leaves += t.n_leaves
        else:
            method = "guide" if m == "multivariate" else "baseline"
            t = cross_validate(design, config, folds, se_rule, cv_seed, method)
            pred = t.predict_coded(cols)
            leaves = t.n_leaves
        out[m] = (float(((pred - mu) ** 2).sum() / test_size), leaves)
    return out


def mse_experiment(
    spec: ScenarioSpec,
    trials: int,
    methods: Sequence[str] | None = None,
    *,
    config: GrowConfig | None = None,
    folds: int = 10,
    se_rule: float = 0.0,
    test_size: int = 100,
    threads: int = 1,
) -> MseReport:
    """Mean squared error of cross-validation-pruned trees against the true mean.

    Multiresponse scenarios score ``test_size`` fresh points, summing squared
    errors over the three responses; methods are ``univariate`` (one tree per
    response), ``multivariate`` and ``baseline``.  Longitudinal scenarios fit
    the ``guide`` tree only and average over the 6^5 predictor grid and the
    ten time points.
    """
    if trials < 2:
        raise ValueError("trials must be at least 2")
    config = config or GrowConfig()
    if spec.longitudinal:
        methods = ("guide",)
    else:
        methods = tuple(methods or MULTI_METHODS)
        bad = set(methods) - set(MULTI_METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
    args = [(spec, t, methods, config, folds, se_rule, test_size) for t in range(trials)]
    rows = _run(_mse_trial, args, threads)
    report = MseReport(spec, trials)
    for m in methods:
        report.results[m] = MethodResult(
            np.array([r[m][0] for r in rows]), np.array([r[m][1] for r in rows], dtype=float)
        )
    return report

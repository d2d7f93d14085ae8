"""Command-line interface: fit, predict, show, simulate-bias, simulate-mse."""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

import numpy as np

from .dataset import load_csv, read_roles
from .design import encode_predictors
from .tree import GrowConfig, Tree, cross_validate, deserialize, serialize

DEFAULT_SEED = 20240607


def _default_threads() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover
        return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvguide", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="grow and prune a tree, write the model and summaries")
    f.add_argument("--data", required=True)
    f.add_argument("--roles", required=True, help="file of name:role lines")
    f.add_argument("--out", required=True, help="model JSON path")
    f.add_argument("--longitudinal", action="store_true")
    f.add_argument("--intervals", type=int, default=3)
    f.add_argument("--span", type=float, default=2.0 / 3.0)
    f.add_argument("--robust-iters", type=int, default=3)
    f.add_argument("--folds", type=int, default=10)
    f.add_argument("--se-rule", type=float, default=0.0)
    f.add_argument("--normalize", action="store_true")
    f.add_argument("--method", choices=("guide", "baseline"), default="guide")
    f.add_argument("--min-node-size", type=int)
    f.add_argument("--max-depth", type=int, default=30)
    f.add_argument("--missing-y-sign", type=int, choices=(-1, 1), default=-1)
    f.add_argument("--na", default="NA", help="missing-value token")
    f.add_argument("--seed", type=int, default=DEFAULT_SEED)

    pr = sub.add_parser("predict", help="predict new data with a saved model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--na", default="NA")

    s = sub.add_parser("show", help="print a saved model as a text tree")
    s.add_argument("--model", required=True)

    b = sub.add_parser("simulate-bias", help="root-split selection frequencies under the null")
    b.add_argument("--data", help="CSV (default: bundled concrete clone)")
    b.add_argument("--roles")
    b.add_argument("--method", choices=("guide", "baseline"), default="guide")
    b.add_argument("--trials", type=int, default=2000)
    b.add_argument("--seed", type=int, default=DEFAULT_SEED)
    b.add_argument("--augment", default="", help="comma-separated category counts, e.g. 2,20")
    b.add_argument("--missing", help="VAR:FRACTION of values to blank, e.g. fine:0.8")
    b.add_argument("--threads", type=int, default=None)
    b.add_argument("--out", help="CSV path for plot data")

    m = sub.add_parser("simulate-mse", help="prediction MSE of pruned trees on a scenario")
    m.add_argument("--scenario", required=True)
    m.add_argument("--n", type=int, default=None, help="training size (default 100, 200 longitudinal)")
    m.add_argument("--trials", type=int, default=200)
    m.add_argument("--seed", type=int, default=DEFAULT_SEED)
    m.add_argument("--methods", default="univariate,multivariate,baseline")
    m.add_argument("--folds", type=int, default=10)
    m.add_argument("--threads", type=int, default=None)
    m.add_argument("--out", help="CSV path")
    return p


# ---------------------------------------------------------------------------
# fit / predict / show
# ---------------------------------------------------------------------------


def _stem(out: str) -> Path:
    p = Path(out)
    return p.with_suffix("") if p.suffix == ".json" else p


def terminal_csv(tree: Tree) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if tree.layout == "longitudinal":
        w.writerow(["node", "n", "sse", "knots"])
        for t in tree.terminals():
            w.writerow([t.id, t.n, f"{t.sse:.6g}", len(t.curve.u)])
    else:
        w.writerow(["node", "n", "sse", *tree.response_names])
        for t in tree.terminals():
            w.writerow([t.id, t.n, f"{t.sse:.6g}", *(f"{v:.6g}" for v in t.mean)])
    return buf.getvalue()


def curves_csv(tree: Tree) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "u", "fitted"])
    for t in tree.terminals():
        for u, s in t.curve.knots:
            w.writerow([t.id, repr(u), repr(s)])
    return buf.getvalue()


def cmd_fit(a) -> int:
    roles = read_roles(a.roles)
    layout = "longitudinal" if a.longitudinal else None
    ds = load_csv(a.data, roles, na=(a.na,), layout=layout)
    if a.longitudinal and ds.layout != "longitudinal":
        raise ValueError("--longitudinal needs time and subject_id roles")
    config = GrowConfig(
        min_node_size=a.min_node_size,
        max_depth=a.max_depth,
        missing_y_sign=a.missing_y_sign,
        normalize=a.normalize,
        span=a.span,
        robust_iters=a.robust_iters,
        intervals=a.intervals,
    )
    tree = cross_validate(ds, config, a.folds, a.se_rule, a.seed, a.method)
    stem = _stem(a.out)
    Path(a.out).write_text(serialize(tree))
    text = tree.to_text()
    stem.with_suffix(".txt").write_text(text)
    Path(f"{stem}_terminals.csv").write_text(terminal_csv(tree))
    if tree.layout == "longitudinal":
        Path(f"{stem}_curves.csv").write_text(curves_csv(tree))
    sys.stdout.write(text)
    return 0


def _read_columns(path: str, na: str) -> dict[str, list[str | None]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    cols: dict[str, list] = {h: [] for h in header}
    for i, r in enumerate(rows[1:], 2):
        if len(r) != len(header):
            raise ValueError(f"{path}:{i}: expected {len(header)} fields, got {len(r)}")
        for h, c in zip(header, r):
            c = c.strip()
            cols[h].append(None if c in ("", na) else c)
    return cols


def cmd_predict(a) -> int:
    tree = deserialize(Path(a.model).read_text())
    cols = _read_columns(a.data, a.na)
    missing = [n for n in tree.names if n not in cols]
    if missing:
        raise ValueError(f"data lacks predictor columns {missing}")
    raw = {}
    for name, kind in zip(tree.names, tree.kinds):
        vals = cols[name]
        raw[name] = vals if kind == "categorical" else [None if v is None else float(v) for v in vals]
    xcols = encode_predictors(tree._design_stub(), raw)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if tree.layout == "longitudinal":
        tname = tree.time_name
        if tname not in cols:
            raise ValueError(f"data lacks the time column {tname!r}")
        u = np.array([float(v) for v in cols[tname]])
        pred = tree.predict_coded(xcols, u)
        ids = cols.get(tree.subject_name)
        w.writerow(([tree.subject_name] if ids else []) + [tname, "predicted"])
        for i, p in enumerate(pred):
            w.writerow(([ids[i]] if ids else []) + [cols[tname][i], repr(float(p))])
    else:
        pred = tree.predict_coded(xcols)
        w.writerow(list(tree.response_names))
        for row in pred:
            w.writerow([repr(float(v)) for v in row])
    Path(a.out).write_text(buf.getvalue())
    return 0


def cmd_show(a) -> int:
    sys.stdout.write(deserialize(Path(a.model).read_text()).to_text())
    return 0


# ---------------------------------------------------------------------------
# simulations
# ---------------------------------------------------------------------------


def cmd_simulate_bias(a) -> int:
    from .concrete import load_clone
    from .simharness import bias_experiment

    if a.data:
        if not a.roles:
            raise ValueError("--data needs --roles")
        ds = load_csv(a.data, read_roles(a.roles))
    else:
        ds = load_clone()
    augment = tuple(int(k) for k in a.augment.split(",") if k.strip())
    missing = None
    if a.missing:
        var, _, frac = a.missing.rpartition(":")
        if not var or var not in ds.names:
            raise ValueError(f"--missing names no column: {a.missing!r}")
        missing = (var, float(frac))
    threads = a.threads or _default_threads()
    rep = bias_experiment(ds, a.trials, a.seed, a.method, augment, missing, threads)
    sys.stdout.write(rep.to_text())
    if a.out:
        Path(a.out).write_text(rep.to_csv())
    return 0


def cmd_simulate_mse(a) -> int:
    from .simharness import ScenarioSpec, mse_experiment

    spec = ScenarioSpec(a.scenario, a.n or 100, a.seed)
    if a.n is None and spec.longitudinal:
        spec = ScenarioSpec(a.scenario, 200, a.seed)
    methods = tuple(m.strip() for m in a.methods.split(",") if m.strip())
    threads = a.threads or _default_threads()
    rep = mse_experiment(spec, a.trials, methods, folds=a.folds, threads=threads)
    sys.stdout.write(rep.to_text())
    if a.out:
        Path(a.out).write_text(rep.to_csv())
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "show": cmd_show,
    "simulate-bias": cmd_simulate_bias,
    "simulate-mse": cmd_simulate_mse,
}


def run(argv: list[str] | None = None) -> int:
    """Run one command; returns 0 on success, 1 on runtime errors, 2 on usage errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"mvguide {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

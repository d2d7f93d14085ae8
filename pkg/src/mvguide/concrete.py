"""Concrete slump data: a loader for the published file and a bundled synthetic clone.

The published data set (103 mixes, 7 ingredient amounts, 3 responses) is
not redistributed here.  The clone reproduces its shape: the same column
ranges, the same number of distinct values per predictor (80, 63, 58, 70,
32, 92, 90) and three responses, two of them highly correlated.  It is
suited to selection-bias experiments, which depend on the predictors only
through their numbers of distinct values once the columns are permuted.
"""

from __future__ import annotations

import csv
import io
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import Dataset

PREDICTORS = ("cement", "slag", "flyash", "water", "sp", "coarse", "fine")
RESPONSES = ("slump", "flow", "strength")
UNIQUE_COUNTS = (80, 63, 58, 70, 32, 92, 90)
N_ROWS = 103
# (low, high, share of rows at zero, decimals)
_RANGES = {
    "cement": (137.0, 374.0, 0.0, 0),
    "slag": (0.0, 193.0, 0.27, 0),
    "flyash": (0.0, 260.0, 0.19, 0),
    "water": (160.0, 240.0, 0.0, 1),
    "sp": (4.4, 19.0, 0.0, 1),
    "coarse": (708.0, 1050.0, 0.0, 1),
    "fine": (640.0, 902.0, 0.0, 1),
}
CLONE_SEED = 20260101

ROLES = {**{p: "numeric_predictor" for p in PREDICTORS}, **{r: "response" for r in RESPONSES}}


def _column(rng: np.random.Generator, name: str, k: int) -> np.ndarray:
    lo, hi, zero_share, decimals = _RANGES[name]
    has_zero = zero_share > 0
    pool: set[float] = {0.0} if has_zero else set()
    start = max(lo, 1.0) if has_zero else lo
    while len(pool) < k:
        pool.add(round(float(rng.uniform(start, hi)), decimals))
    values = np.array(sorted(pool))
    # every distinct value appears once; the remaining rows repeat values
    rest = N_ROWS - k
    if has_zero:
        n_zero = max(1, int(round(zero_share * N_ROWS)))
        extra = np.concatenate(
            [np.zeros(min(n_zero - 1, rest)), rng.choice(values[1:], rest - min(n_zero - 1, rest))]
        )
    else:
        extra = rng.choice(values, rest)
    col = np.concatenate([values, extra])
    return rng.permutation(col)


def synthesize_clone(seed: int = CLONE_SEED) -> dict[str, np.ndarray]:
    """Columns of the synthetic clone (deterministic in ``seed``)."""
    rng = np.random.default_rng(seed)
    cols = {name: _column(rng, name, k) for name, k in zip(PREDICTORS, UNIQUE_COUNTS)}
    w = cols["water"]
    low_water = w <= 182.0
    z = lambda c: (cols[c] - cols[c].mean()) / cols[c].std()  # noqa: E731
    fluid = 0.9 * z("water") - 0.5 * z("slag") + 0.3 * z("sp") - 0.6 * low_water + rng.normal(0, 0.6, N_ROWS)
    slump = np.clip(18.0 + 7.0 * fluid, 0.0, 29.0)
    flow = np.clip(50.0 + 14.0 * fluid + rng.normal(0, 7.0, N_ROWS), 20.0, 78.0)
    strength = (
        36.0
        + 5.0 * low_water
        + 4.0 * z("cement")
        + 2.5 * z("flyash")
        - 2.0 * z("coarse") * low_water
        + rng.normal(0, 3.0, N_ROWS)
    )
    cols["slump"] = np.round(slump, 1)
    cols["flow"] = np.round(flow, 1)
    cols["strength"] = np.round(strength, 2)
    return cols


def clone_dataset(seed: int = CLONE_SEED) -> Dataset:
    return Dataset.from_arrays(synthesize_clone(seed), ROLES)


def load_clone() -> Dataset:
    """The bundled clone CSV as a :class:`Dataset`."""
    text = resources.files("mvguide.data").joinpath("concrete_clone.csv").read_text()
    return _from_text(text, {c: c for c in PREDICTORS + RESPONSES})


# column headers of the published file, mapped to short names
_UCI_HEADERS = {
    "Cement": "cement",
    "Slag": "slag",
    "Fly ash": "flyash",
    "Water": "water",
    "SP": "sp",
    "Coarse Aggr.": "coarse",
    "Fine Aggr.": "fine",
    "SLUMP(cm)": "slump",
    "FLOW(cm)": "flow",
    "Compressive Strength (28-day)(Mpa)": "strength",
}


def load_uci_slump(path: str | Path) -> Dataset:
    """Read the published comma-separated slump file (with its ``No`` column)."""
    return _from_text(Path(path).read_text(), _UCI_HEADERS)


def _from_text(text: str, headers: dict[str, str]) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    head = [h.strip() for h in next(reader)]
    index = {}
    for raw, short in headers.items():
        if raw not in head:
            raise ValueError(f"column {raw!r} not found")
        index[short] = head.index(raw)
    rows = [r for r in reader if r and any(c.strip() for c in r)]
    data = {short: np.array([float(r[i]) for r in rows]) for short, i in index.items()}
    return Dataset.from_arrays(data, ROLES)

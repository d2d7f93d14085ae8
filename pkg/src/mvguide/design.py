"""Fitting frame shared by the selector, splitter and tree builders.

A :class:`Design` holds one entry per *unit*: a data row in the
multiresponse layout, a subject in the longitudinal layout.  Split search
works on additive sufficient statistics ``(count, sum, sum of squares)``
per unit and response column, so the same code scores splits in both
layouts.  In the longitudinal layout the columns are time bins and a
unit's statistics pool its observations in each bin.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset, DatasetError

# Longitudinal split scoring bins: one per distinct time up to this many,
# otherwise equal-width bins.
MAX_EXACT_BINS = 20
DEFAULT_BINS = 10


@dataclass(frozen=True)
class Design:
    layout: str
    names: tuple[str, ...]
    kinds: tuple[str, ...]  # "numeric" | "categorical" per predictor
    x: tuple[np.ndarray, ...]  # per predictor, one float per unit (NaN = missing)
    categories: tuple[tuple[str, ...] | None, ...]
    stats: np.ndarray  # (units, columns, 3)
    response_names: tuple[str, ...]
    # multiresponse
    y: np.ndarray | None = None  # raw responses (units, d)
    yn: np.ndarray | None = None  # responses used for impurity (normalized or raw)
    scale: tuple[np.ndarray, np.ndarray] | None = None  # (center, spread) of yn
    # longitudinal
    unit_ids: tuple[str, ...] | None = None
    obs_start: np.ndarray | None = None
    obs_len: np.ndarray | None = None
    obs_u: np.ndarray | None = None
    obs_y: np.ndarray | None = None
    time_name: str | None = None
    subject_name: str | None = None

    @property
    def n_units(self) -> int:
        return self.stats.shape[0]

    @property
    def n_predictors(self) -> int:
        return len(self.names)

    @property
    def longitudinal(self) -> bool:
        return self.layout == "longitudinal"

    def index(self, var: int | str) -> int:
        return var if isinstance(var, (int, np.integer)) else self.names.index(var)

    def obs_index(self, units: np.ndarray) -> np.ndarray:
        """Observation indices (into ``obs_u``/``obs_y``) of the given subjects."""
        starts = self.obs_start[units]
        lens = self.obs_len[units]
        total = int(lens.sum())
        if total == 0:
            return np.empty(0, dtype=np.intp)
        offsets = np.repeat(starts - np.concatenate(([0], np.cumsum(lens)[:-1])), lens)
        return offsets + np.arange(total)

    def obs_owner(self, units: np.ndarray) -> np.ndarray:
        """Position in ``units`` of each observation returned by :meth:`obs_index`."""
        return np.repeat(np.arange(len(units)), self.obs_len[units])

    def subset(self, units: np.ndarray) -> "Design":
        units = np.asarray(units, dtype=np.intp)
        x = tuple(col[units] for col in self.x)
        if not self.longitudinal:
            return replace(
                self, x=x, stats=self.stats[units], y=self.y[units], yn=self.yn[units]
            )
        idx = self.obs_index(units)
        lens = self.obs_len[units]
        starts = np.concatenate(([0], np.cumsum(lens)[:-1]))
        return replace(
            self,
            x=x,
            stats=self.stats[units],
            unit_ids=tuple(self.unit_ids[i] for i in units),
            obs_start=starts,
            obs_len=lens,
            obs_u=self.obs_u[idx],
            obs_y=self.obs_y[idx],
        )


def sse_from_stats(s: np.ndarray) -> np.ndarray:
    """Sum over columns of within-group squared deviations.

    ``s`` has shape ``(..., columns, 3)``; empty columns contribute zero.
    """
    cnt = s[..., 0]
    tot = s[..., 1]
    # empty columns have tot == sq == 0, so any positive divisor gives 0
    per = s[..., 2] - tot * tot / np.where(cnt > 0, cnt, 1.0)
    return np.maximum(per, 0.0).sum(axis=-1)


def _predictor_arrays(columns):
    names, kinds, xs, cats = [], [], [], []
    for c in columns:
        names.append(c.name)
        kinds.append("categorical" if c.role == "categorical_predictor" else "numeric")
        xs.append(np.asarray(c.values, dtype=float))
        cats.append(c.categories)
    return tuple(names), tuple(kinds), tuple(xs), tuple(cats)


def design_from_dataset(ds: Dataset, *, normalize: bool = False) -> Design:
    if ds.n_rows == 0:
        raise DatasetError("empty dataset")
    if ds.layout == "longitudinal":
        return _longitudinal_design(ds)
    names, kinds, xs, cats = _predictor_arrays(ds.predictors)
    y = ds.response_matrix()
    if np.isnan(y).all(axis=0).any():
        raise DatasetError("a response column is entirely missing")
    center = np.nanmean(y, axis=0)
    if normalize:
        spread = np.nanstd(y, axis=0, ddof=1) if len(y) > 1 else np.ones(y.shape[1])
        spread = np.where((spread > 0) & np.isfinite(spread), spread, 1.0)
    else:
        spread = np.ones(y.shape[1])
    yn = (y - center) / spread
    return Design(
        layout="multiresponse",
        names=names,
        kinds=kinds,
        x=xs,
        categories=cats,
        stats=multiresponse_stats(yn),
        response_names=tuple(c.name for c in ds.responses),
        y=y,
        yn=yn,
        scale=(center, spread),
    )


def multiresponse_stats(yn: np.ndarray) -> np.ndarray:
    ok = ~np.isnan(yn)
    v = np.where(ok, yn, 0.0)
    return np.stack([ok.astype(float), v, v * v], axis=-1)


def time_bins(u: np.ndarray) -> tuple[np.ndarray, int]:
    distinct = np.unique(u)
    if distinct.size <= MAX_EXACT_BINS:
        return np.searchsorted(distinct, u), distinct.size
    lo, hi = distinct[0], distinct[-1]
    b = np.floor((u - lo) / (hi - lo) * DEFAULT_BINS).astype(int)
    return np.clip(b, 0, DEFAULT_BINS - 1), DEFAULT_BINS


def _longitudinal_design(ds: Dataset) -> Design:
    from .dataset import group_by_subject

    series = group_by_subject(ds)
    preds = ds.predictors
    names = tuple(p.name for p in preds)
    kinds = tuple(
        "categorical" if p.role == "categorical_predictor" else "numeric" for p in preds
    )
    cats = tuple(p.categories for p in preds)
    xs = []
    for p in preds:
        lookup = {lab: i for i, lab in enumerate(p.categories or ())}
        col = []
        for s in series:
            v = s.x[p.name]
            if v is None:
                col.append(np.nan)
            elif p.categories is not None:
                col.append(lookup[v])
            else:
                col.append(v)
        xs.append(np.array(col, dtype=float))
    lens = np.array([s.u.size for s in series], dtype=np.intp)
    u = np.concatenate([s.u for s in series])
    yv = np.concatenate([s.y for s in series])
    keep = ~np.isnan(yv)
    if not keep.all():
        # Missing responses carry no information about the trajectory.
        owner = np.repeat(np.arange(len(series)), lens)
        u, yv, owner = u[keep], yv[keep], owner[keep]
        lens = np.bincount(owner, minlength=len(series)).astype(np.intp)
    starts = np.concatenate(([0], np.cumsum(lens)[:-1]))
    return Design(
        layout="longitudinal",
        names=names,
        kinds=kinds,
        x=tuple(xs),
        categories=cats,
        stats=longitudinal_stats(u, yv, lens),
        response_names=(ds.responses[0].name,),
        unit_ids=tuple(s.subject_id for s in series),
        obs_start=starts,
        obs_len=lens,
        obs_u=u,
        obs_y=yv,
        time_name=ds.by_role("time")[0].name,
        subject_name=ds.by_role("subject_id")[0].name,
    )


def longitudinal_stats(u: np.ndarray, y: np.ndarray, lens: np.ndarray) -> np.ndarray:
    bins, nb = time_bins(u)
    owner = np.repeat(np.arange(len(lens)), lens)
    yc = y - (y.mean() if y.size else 0.0)
    cell = owner * nb + bins
    size = len(lens) * nb
    out = np.stack(
        [
            np.bincount(cell, minlength=size),
            np.bincount(cell, weights=yc, minlength=size),
            np.bincount(cell, weights=yc * yc, minlength=size),
        ],
        axis=-1,
    ).astype(float)
    return out.reshape(len(lens), nb, 3)


def encode_predictors(
    design: Design, columns: dict[str, list] | Dataset
) -> tuple[np.ndarray, ...]:
    """Predictor columns of new data in ``design``'s code space.

    Unknown category labels are treated as missing.
    """
    out = []
    for name, kind, cats in zip(design.names, design.kinds, design.categories):
        if isinstance(columns, Dataset):
            col = columns[name]
            raw = col.labels() if kind == "categorical" else col.values
        else:
            raw = columns[name]
        if kind == "categorical":
            lookup = {lab: i for i, lab in enumerate(cats)}
            out.append(
                np.array(
                    [np.nan if v is None else lookup.get(str(v), np.nan) for v in raw],
                    dtype=float,
                )
            )
        else:
            out.append(
                np.array([np.nan if v is None else float(v) for v in raw], dtype=float)
            )
    return tuple(out)

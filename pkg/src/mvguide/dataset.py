"""Columnar datasets with column roles and missingness.

A :class:`Dataset` is an immutable table loaded from CSV together with a
small role file (one ``name:role`` per line).  Numeric cells are stored as
``float64`` with ``NaN`` for missing values; categorical cells are stored as
integer codes (also ``float64``, ``NaN`` for missing) into a per-column
dictionary ordered by first appearance.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

ROLES = (
    "numeric_predictor",
    "categorical_predictor",
    "response",
    "time",
    "subject_id",
    "excluded",
)
PREDICTOR_ROLES = ("numeric_predictor", "categorical_predictor")
# Roles whose values are kept as labels rather than numbers.
_LABEL_ROLES = ("categorical_predictor", "subject_id")


class DatasetError(ValueError):
    """Raised for malformed data files, role specs or layouts."""


@dataclass(frozen=True)
class Column:
    name: str
    role: str
    values: np.ndarray
    categories: tuple[str, ...] | None = None

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def labels(self) -> list[str | None]:
        """Cell values as strings (categorical) or floats, ``None`` if missing."""
        out: list = []
        for v in self.values:
            if math.isnan(v):
                out.append(None)
            elif self.categories is not None:
                out.append(self.categories[int(v)])
            else:
                out.append(float(v))
        return out


@dataclass(frozen=True)
class SubjectSeries:
    subject_id: str
    x: dict[str, float | str | None]
    u: np.ndarray
    y: np.ndarray

    @property
    def obs(self) -> list[tuple[float, float]]:
        return list(zip(self.u.tolist(), self.y.tolist()))


@dataclass(frozen=True)
class Dataset:
    columns: tuple[Column, ...]
    layout: str = "multiresponse"
    _index: dict[str, int] = field(default=None, repr=False, compare=False)  # type: ignore[assignment]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DatasetError("duplicate column names")
        lengths = {len(c.values) for c in self.columns}
        if len(lengths) > 1:
            raise DatasetError("columns have unequal lengths")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})
        _validate_roles(self)

    # -- accessors -------------------------------------------------------
    @property
    def n_rows(self) -> int:
        return len(self.columns[0].values) if self.columns else 0

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def roles(self) -> dict[str, str]:
        return {c.name: c.role for c in self.columns}

    @property
    def missing_mask(self) -> np.ndarray:
        return np.column_stack([c.missing for c in self.columns])

    def __getitem__(self, name: str) -> Column:
        try:
            return self.columns[self._index[name]]
        except KeyError:
            raise KeyError(f"no column named {name!r}") from None

    def by_role(self, *roles: str) -> list[Column]:
        return [c for c in self.columns if c.role in roles]

    @property
    def predictors(self) -> list[Column]:
        return self.by_role(*PREDICTOR_ROLES)

    @property
    def responses(self) -> list[Column]:
        return self.by_role("response")

    def response_matrix(self) -> np.ndarray:
        return np.column_stack([c.values for c in self.responses])

    def take(self, rows: Sequence[int] | np.ndarray) -> "Dataset":
        """Row subset sharing the category dictionaries of this dataset."""
        rows = np.asarray(rows, dtype=np.intp)
        cols = tuple(
            Column(c.name, c.role, c.values[rows], c.categories) for c in self.columns
        )
        return Dataset(cols, self.layout)

    def replace(self, name: str, column: Column) -> "Dataset":
        cols = list(self.columns)
        cols[self._index[name]] = column
        return Dataset(tuple(cols), self.layout)

    def with_column(self, column: Column) -> "Dataset":
        return Dataset(self.columns + (column,), self.layout)

    # -- construction ----------------------------------------------------
    @classmethod
    def from_arrays(
        cls,
        data: Mapping[str, Iterable],
        roles: Mapping[str, str],
        layout: str | None = None,
    ) -> "Dataset":
        """Build a dataset from in-memory columns.

        Numeric columns may contain ``NaN`` or ``None`` for missing values.
        Categorical and subject-id columns accept arbitrary hashable labels
        (``None`` marks missing); labels are converted with ``str``.
        """
        unknown = set(roles) - set(data)
        if unknown:
            raise DatasetError(f"role spec names unknown columns: {sorted(unknown)}")
        cols = []
        for name, raw in data.items():
            if name not in roles:
                raise DatasetError(f"column {name!r} has no role")
            role = roles[name]
            if role not in ROLES:
                raise DatasetError(f"unknown role {role!r} for column {name!r}")
            if role in _LABEL_ROLES:
                vals, cats = _encode_labels(
                    None if _is_missing(v) else str(v) for v in raw
                )
                cols.append(Column(name, role, vals, cats))
            else:
                vals = np.array(
                    [np.nan if _is_missing(v) else float(v) for v in raw], dtype=float
                )
                cols.append(Column(name, role, vals))
        return cls(tuple(cols), layout or _infer_layout(roles))


def _is_missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def _encode_labels(labels: Iterable[str | None]) -> tuple[np.ndarray, tuple[str, ...]]:
    lookup: dict[str, int] = {}
    codes = []
    for lab in labels:
        if lab is None:
            codes.append(np.nan)
        else:
            codes.append(lookup.setdefault(lab, len(lookup)))
    return np.array(codes, dtype=float), tuple(lookup)


def _infer_layout(roles: Mapping[str, str]) -> str:
    present = set(roles.values())
    return "longitudinal" if {"time", "subject_id"} & present else "multiresponse"


def _validate_roles(ds: Dataset) -> None:
    if not ds.columns:
        raise DatasetError("dataset has no columns")
    counts: dict[str, int] = {}
    for c in ds.columns:
        if c.role not in ROLES:
            raise DatasetError(f"unknown role {c.role!r}")
        counts[c.role] = counts.get(c.role, 0) + 1
    if not ds.predictors:
        raise DatasetError("at least one predictor column is required")
    if ds.layout == "multiresponse":
        if counts.get("response", 0) < 1:
            raise DatasetError("multiresponse layout needs at least one response column")
        if counts.get("time") or counts.get("subject_id"):
            raise DatasetError("time/subject_id roles require the longitudinal layout")
    elif ds.layout == "longitudinal":
        if counts.get("time") != 1 or counts.get("subject_id") != 1 or counts.get("response") != 1:
            raise DatasetError(
                "longitudinal layout needs exactly one time, one subject_id and one response column"
            )
        t = ds.by_role("time")[0].values
        if not np.all(np.isfinite(t)):
            raise DatasetError("longitudinal layout with missing or non-finite time")
        if np.isnan(ds.by_role("subject_id")[0].values).any():
            raise DatasetError("longitudinal layout with missing subject_id")
    else:
        raise DatasetError(f"unknown layout {ds.layout!r}")


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def read_roles(path: str | Path) -> dict[str, str]:
    """Parse a role file: one ``name:role`` per line, ``#`` comments allowed."""
    roles: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, role = line.rpartition(":")
        if not sep or not name.strip():
            raise DatasetError(f"{path}:{lineno}: expected 'name:role'")
        role = role.strip()
        if role not in ROLES:
            raise DatasetError(f"{path}:{lineno}: unknown role {role!r}")
        roles[name.strip()] = role
    return roles


def load_csv(
    path: str | Path,
    roles: Mapping[str, str] | str | Path,
    *,
    na: Sequence[str] = ("NA",),
    layout: str | None = None,
) -> Dataset:
    """Load a CSV file with a header row.

    ``roles`` is either a mapping or a path to a role file and must name
    every column of the file.  Empty fields and any token in ``na`` are
    missing.
    """
    if not isinstance(roles, Mapping):
        roles = read_roles(roles)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DatasetError(f"{path}: duplicate column names")
    unknown = set(roles) - set(header)
    if unknown:
        raise DatasetError(f"role spec names unknown columns: {sorted(unknown)}")
    unnamed = [h for h in header if h not in roles]
    if unnamed:
        raise DatasetError(f"columns without a role: {unnamed}")
    body = [r for r in rows[1:] if r]
    for i, r in enumerate(body, 2):
        if len(r) != len(header):
            raise DatasetError(f"{path}:{i}: expected {len(header)} fields, got {len(r)}")
    na_set = {"", *na}
    data: dict[str, list] = {}
    for j, name in enumerate(header):
        role = roles[name]
        cells = [r[j].strip() for r in body]
        if role in _LABEL_ROLES:
            data[name] = [None if c in na_set else c for c in cells]
        else:
            vals = []
            for i, c in enumerate(cells, 2):
                if c in na_set:
                    vals.append(None)
                    continue
                try:
                    vals.append(float(c))
                except ValueError:
                    raise DatasetError(
                        f"{path}:{i}: non-numeric token {c!r} in column {name!r}"
                    ) from None
            data[name] = vals
    return Dataset.from_arrays(data, roles, layout)


def write_csv(ds: Dataset, path: str | Path | None = None, *, na: str = "NA") -> str:
    """Write ``ds`` as CSV; returns the text and writes it if ``path`` is given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ds.names)
    cols = [c.labels() for c in ds.columns]
    for i in range(ds.n_rows):
        w.writerow([na if col[i] is None else _fmt(col[i]) for col in cols])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def write_roles(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text("".join(f"{c.name}:{c.role}\n" for c in ds.columns))


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# Longitudinal helpers
# ---------------------------------------------------------------------------


def group_by_subject(ds: Dataset) -> list[SubjectSeries]:
    """Split a longitudinal dataset into per-subject series sorted by time.

    Predictors must be constant within a subject; a conflict raises
    :class:`DatasetError`.  Subjects appear in first-appearance order.
    """
    if ds.layout != "longitudinal":
        raise DatasetError("group_by_subject requires the longitudinal layout")
    sid = ds.by_role("subject_id")[0]
    t = ds.by_role("time")[0].values
    y = ds.responses[0].values
    preds = ds.predictors
    out = []
    codes = sid.values.astype(int)
    for code, label in enumerate(sid.categories):
        rows = np.flatnonzero(codes == code)
        if rows.size == 0:
            continue
        x = {}
        for p in preds:
            vals = p.values[rows]
            miss = np.isnan(vals)
            if miss.any() and not miss.all() or (
                not miss.any() and np.unique(vals).size > 1
            ):
                raise DatasetError(
                    f"subject {label!r}: predictor {p.name!r} varies over time"
                )
            v = vals[0]
            if np.isnan(v):
                x[p.name] = None
            elif p.categories is not None:
                x[p.name] = p.categories[int(v)]
            else:
                x[p.name] = float(v)
        order = np.argsort(t[rows], kind="stable")
        out.append(SubjectSeries(label, x, t[rows][order], y[rows][order]))
    return out


def concat_series(
    a: Sequence[SubjectSeries], b: Sequence[SubjectSeries], offset: float
) -> list[SubjectSeries]:
    """Append each subject's ``b`` observations, shifted by ``offset``, to ``a``."""
    bmap = {s.subject_id: s for s in b}
    amap = {s.subject_id: s for s in a}
    if set(amap) != set(bmap):
        diff = sorted(set(amap) ^ set(bmap))
        raise DatasetError(f"subjects present in one input only: {diff[:5]}")
    max_a = max((float(s.u.max()) for s in a if s.u.size), default=-np.inf)
    if offset < max_a:
        raise DatasetError(f"offset {offset} is below the last time of the first series")
    out = []
    for s in a:
        t = bmap[s.subject_id]
        out.append(
            SubjectSeries(
                s.subject_id,
                dict(s.x),
                np.concatenate([s.u, t.u + offset]),
                np.concatenate([s.y, t.y]),
            )
        )
    return out


def series_to_dataset(
    series: Sequence[SubjectSeries],
    predictor_roles: Mapping[str, str],
    *,
    subject: str = "id",
    time: str = "time",
    response: str = "y",
) -> Dataset:
    """Flatten subject series back into a one-row-per-observation dataset."""
    data: dict[str, list] = {subject: [], time: [], response: []}
    for name in predictor_roles:
        data[name] = []
    for s in series:
        for u, y in zip(s.u.tolist(), s.y.tolist()):
            data[subject].append(s.subject_id)
            data[time].append(u)
            data[response].append(y)
            for name in predictor_roles:
                data[name].append(s.x.get(name))
    roles = {subject: "subject_id", time: "time", response: "response", **predictor_roles}
    return Dataset.from_arrays(data, roles, "longitudinal")

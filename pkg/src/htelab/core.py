"""Data model, CSV ingestion and fold assignment shared across the package."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .rng import RngStream


class DataError(ValueError):
    """Invalid input data; carries optional row/column coordinates.

    Rows are 1-based data rows (the header is row 0).
    """

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        full = f"{message} ({', '.join(where)})" if where else message
        super().__init__(full)
        self.message = message
        self.row = row
        self.column = column


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Observed sample (X, Y, T) with an optional known propensity.

    Arrays are copied on construction and made read-only, so a Dataset can be
    shared between tasks without defensive copies.

    Attributes:
        x: (n, p) covariates.
        y: (n,) outcome.
        t: (n,) treatment in {0, 1}.
        pi_known: (n,) known P(T=1|X), strictly inside (0, 1), or None.
        feature_names: p column names.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    pi_known: np.ndarray | None = None
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise DataError("x must be a 2-d matrix")
        n, p = x.shape
        y = np.asarray(self.y, dtype=float).ravel()
        t_raw = np.asarray(self.t).ravel()
        if n < 2:
            raise DataError("need at least 2 observations")
        if p < 1:
            raise DataError("need at least 1 covariate")
        if y.shape[0] != n or t_raw.shape[0] != n:
            raise DataError("x, y and t must have the same number of rows")
        if not np.all(np.isfinite(x)):
            raise DataError("non-finite covariate value")
        if not np.all(np.isfinite(y)):
            raise DataError("non-finite outcome value")
        if not np.all((t_raw == 0) | (t_raw == 1)):
            raise DataError("treatment must be coded 0/1")
        t = t_raw.astype(np.int64)
        if t.sum() < 1 or t.sum() > n - 1:
            raise DataError("each treatment arm needs at least one observation")
        pi = None
        if self.pi_known is not None:
            pi = np.asarray(self.pi_known, dtype=float).ravel()
            if pi.shape[0] != n:
                raise DataError("pi_known length differs from n")
            if not np.all((pi > 0.0) & (pi < 1.0)):
                raise DataError("known propensity must lie strictly inside (0, 1)")
        names = tuple(self.feature_names) if self.feature_names else tuple(
            f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise DataError("feature_names length differs from p")
        object.__setattr__(self, "x", _frozen(x, float))
        object.__setattr__(self, "y", _frozen(y, float))
        object.__setattr__(self, "t", _frozen(t, np.int64))
        object.__setattr__(self, "pi_known", None if pi is None else _frozen(pi, float))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def a(self) -> np.ndarray:
        """Treatment recoded to {-1, +1}."""
        return 2.0 * self.t - 1.0

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.y[idx], self.t[idx],
                       None if self.pi_known is None else self.pi_known[idx],
                       self.feature_names)

    def with_outcome(self, y) -> "Dataset":
        return Dataset(self.x, y, self.t, self.pi_known, self.feature_names)


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    k: int

    def train_test(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        test = np.flatnonzero(self.fold_of == fold)
        train = np.flatnonzero(self.fold_of != fold)
        return train, test

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.k)


def make_folds(n: int, k: int, rng: RngStream, stratify_by=None) -> FoldAssignment:
    """Random K-fold partition of ``range(n)``.

    With ``stratify_by`` the rows of each stratum are shuffled and dealt
    round-robin, and the dealing continues where the previous stratum stopped.
    That keeps per-stratum fold counts within one of each other and the total
    fold sizes within one as well.
    """
    if k < 2 or k > n:
        raise ValueError(f"fold count must satisfy 2 <= k <= n (got k={k}, n={n})")
    fold_of = np.empty(n, dtype=np.int64)
    if stratify_by is None:
        perm = rng.permutation(n)
        fold_of[perm] = np.arange(n) % k
    else:
        s = np.asarray(stratify_by).ravel()
        if s.shape[0] != n:
            raise ValueError("stratify_by length differs from n")
        offset = 0
        for level in np.unique(s):
            idx = np.flatnonzero(s == level)
            perm = idx[rng.permutation(idx.size)]
            fold_of[perm] = (offset + np.arange(idx.size)) % k
            offset = (offset + idx.size) % k
    fold_of.setflags(write=False)
    return FoldAssignment(fold_of, k)


# ---------------------------------------------------------------- CSV


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for :func:`load_csv`.

    ``covariates=None`` means every column not assigned another role (and not
    listed in ``ignore``), in file order.
    """

    outcome: str = "y"
    treatment: str = "t"
    propensity: str | None = None
    covariates: Sequence[str] | None = None
    ignore: Sequence[str] = ()


def _read_rows(path: Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path} has no header row") from None
    rows = [(i + 1, r) for i, r in enumerate(reader) if r]
    return header, rows


def load_csv(path, schema: CsvSchema | Mapping | None = None) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    Lines starting with ``#`` (provenance blocks) are skipped.  Values are
    parsed with ``float`` so the decimal point is always ``.``.

    Raises:
        DataError: missing column, unparsable cell, treatment outside {0,1},
            propensity outside (0,1); messages name the row and column.
    """
    if schema is None:
        schema = CsvSchema()
    elif isinstance(schema, Mapping):
        schema = CsvSchema(**schema)
    path = Path(path)
    header, rows = _read_rows(path)
    col = {name: j for j, name in enumerate(header)}
    for role, name in (("outcome", schema.outcome), ("treatment", schema.treatment)):
        if name not in col:
            raise DataError(f"missing {role} column", column=name)
    if schema.propensity is not None and schema.propensity not in col:
        raise DataError("missing propensity column", column=schema.propensity)
    taken = {schema.outcome, schema.treatment, schema.propensity, *schema.ignore}
    if schema.covariates is None:
        covs = [h for h in header if h not in taken]
    else:
        covs = list(schema.covariates)
        for c in covs:
            if c not in col:
                raise DataError("missing covariate column", column=c)
    if not covs:
        raise DataError("no covariate columns")

    wanted = [schema.outcome, schema.treatment] + covs
    if schema.propensity is not None:
        wanted.append(schema.propensity)
    mat = np.empty((len(rows), len(wanted)))
    for r, (rowno, cells) in enumerate(rows):
        if len(cells) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(cells)}", row=rowno)
        for c, name in enumerate(wanted):
            raw = cells[col[name]].strip()
            try:
                v = float(raw)
            except ValueError:
                raise DataError(f"non-numeric value {raw!r}", row=rowno, column=name) from None
            if not math.isfinite(v):
                raise DataError(f"non-finite value {raw!r}", row=rowno, column=name)
            mat[r, c] = v
    for r, (rowno, _) in enumerate(rows):
        if mat[r, 1] not in (0.0, 1.0):
            raise DataError(f"treatment value {mat[r, 1]!r} not in {{0,1}}",
                            row=rowno, column=schema.treatment)
        if schema.propensity is not None and not 0.0 < mat[r, -1] < 1.0:
            raise DataError(f"propensity {mat[r, -1]!r} violates positivity (must be in (0,1))",
                            row=rowno, column=schema.propensity)
    pcols = len(covs)
    return Dataset(
        x=mat[:, 2:2 + pcols], y=mat[:, 0], t=mat[:, 1].astype(np.int64),
        pi_known=mat[:, -1] if schema.propensity is not None else None,
        feature_names=tuple(covs))


def format_float(v: float) -> str:
    """Shortest round-tripping decimal text for ``v``."""
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_table(path, columns: Mapping[str, Sequence], provenance: Sequence[str] = ()) -> None:
    """Write named columns as CSV, preceded by ``# `` provenance lines."""
    names = list(columns)
    cols = [list(columns[c]) for c in names]
    nrow = len(cols[0]) if cols else 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for line in provenance:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(nrow):
            w.writerow(_cell(c[i]) for c in cols)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if math.isnan(f):
        return ""
    return format_float(f)


def save_csv(path, data: Dataset, outcome: str = "y", treatment: str = "t",
             propensity: str = "pi", provenance: Sequence[str] = ()) -> None:
    """Write a Dataset in the layout :func:`load_csv` reads back."""
    cols: dict[str, Sequence] = {outcome: data.y, treatment: data.t}
    if data.pi_known is not None:
        cols[propensity] = data.pi_known
    for j, name in enumerate(data.feature_names):
        cols[name] = data.x[:, j]
    write_table(path, cols, provenance)

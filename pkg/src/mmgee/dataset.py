"""Long-format multivariate longitudinal data: ingestion and preprocessing."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from .errors import DataError, ParseError, SchemaError, SpecError, StructuralError

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "."})


@dataclass(frozen=True)
class ColumnRoles:
    """Which CSV columns play which role."""

    id: str
    time: str
    responses: tuple
    covariates: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "responses", tuple(self.responses))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if not self.responses:
            raise SpecError("at least one response column is required")
        names = [self.id, self.time, *self.responses, *self.covariates]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise SpecError(f"columns assigned to more than one role: {dup}")


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    """Validated long-format panel, rows sorted by (subject, time).

    ``responses`` is an ``(M, k)`` array and ``covariates`` an ``(M, p)`` array.
    Subject identifiers are kept as strings; their order of first appearance in
    the sorted data defines cluster order.
    """

    subject: np.ndarray
    time: np.ndarray
    responses: np.ndarray
    covariates: np.ndarray
    response_names: tuple
    covariate_names: tuple
    id_name: str = "id"
    time_name: str = "time"
    _clusters: tuple = field(default=None, repr=False)

    def __post_init__(self):
        subject = np.asarray(self.subject).astype(str)
        time = np.asarray(self.time)
        resp = np.asarray(self.responses, dtype=float)
        cov = np.asarray(self.covariates, dtype=float)
        m = subject.shape[0]
        if resp.ndim == 1:
            resp = resp[:, None]
        if cov.ndim == 1:
            cov = cov.reshape(m, -1)
        if m < 1:
            raise DataError("dataset has no rows")
        if resp.shape != (m, len(self.response_names)) or resp.shape[1] < 1:
            raise DataError("response matrix shape does not match response names")
        if cov.shape != (m, len(self.covariate_names)):
            raise DataError("covariate matrix shape does not match covariate names")
        if not (np.all(np.isfinite(resp)) and np.all(np.isfinite(cov))):
            raise DataError("dataset contains missing or non-finite cells")
        if time.shape != (m,):
            raise DataError("time column length mismatch")

        order = _sort_order(subject, time)
        subject, time, resp, cov = subject[order], time[order], resp[order], cov[order]
        same = subject[1:] == subject[:-1]
        dup = np.flatnonzero(same & (time[1:] == time[:-1]))
        if dup.size:
            i = dup[0] + 1
            raise StructuralError(
                f"duplicate (subject, time) pair: ({subject[i]}, {_fmt_time(time[i])})"
            )
        starts = np.concatenate([[0], np.flatnonzero(~same) + 1, [m]])

        for name, value in (("subject", subject), ("time", time),
                            ("responses", resp), ("covariates", cov)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "response_names", tuple(self.response_names))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        starts.setflags(write=False)
        object.__setattr__(self, "_clusters", starts)

    @property
    def cluster_starts(self) -> np.ndarray:
        """Offsets of each subject's first row, with ``M`` appended."""
        return self._clusters

    @property
    def n_subjects(self) -> int:
        return len(self._clusters) - 1

    @property
    def n_obs(self) -> int:
        return self.subject.shape[0]

    @property
    def cluster_sizes(self) -> np.ndarray:
        return np.diff(self._clusters)

    @property
    def subject_ids(self) -> np.ndarray:
        return self.subject[self._clusters[:-1]]

    @property
    def k(self) -> int:
        return self.responses.shape[1]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def column(self, name: str) -> np.ndarray:
        if name in self.response_names:
            return self.responses[:, self.response_names.index(name)]
        if name in self.covariate_names:
            return self.covariates[:, self.covariate_names.index(name)]
        raise SpecError(f"unknown column {name!r}")

    def describe(self) -> str:
        return (f"N={self.n_subjects} subjects, M={self.n_obs} rows, "
                f"k={self.k} responses, p={self.p} covariates")

    def equals(self, other: "LongitudinalDataset") -> bool:
        return (
            self.response_names == other.response_names
            and self.covariate_names == other.covariate_names
            and np.array_equal(self.subject, other.subject)
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.responses, other.responses)
            and np.array_equal(self.covariates, other.covariates)
        )

    def to_csv(self, stream: Optional[TextIO] = None, delimiter: str = ","):
        """Write the dataset as long-format CSV; returns the text if no stream given."""
        out = stream if stream is not None else io.StringIO()
        writer = csv.writer(out, delimiter=delimiter, lineterminator="\n")
        writer.writerow([self.id_name, self.time_name, *self.response_names,
                         *self.covariate_names])
        for r in range(self.n_obs):
            writer.writerow([self.subject[r], _fmt_time(self.time[r]),
                             *map(_fmt_num, self.responses[r]),
                             *map(_fmt_num, self.covariates[r])])
        if stream is None:
            return out.getvalue()
        return None


def _sort_order(subject, time):
    # subjects ordered by first appearance, then by time
    _, first = np.unique(subject, return_index=True)
    rank = {s: i for i, s in enumerate(subject[np.sort(first)])}
    key = np.array([rank[s] for s in subject])
    return np.lexsort((time, key))


def _fmt_num(x: float) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _fmt_time(t) -> str:
    return _fmt_num(t)


def _parse_number(cell: str, row: int, col: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric cell {cell!r} at line {row}, column {col!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite cell {cell!r} at line {row}, column {col!r}")
    return value


def ingest_long(source, roles: ColumnRoles, delimiter: str = ",",
                drop_incomplete: bool = False) -> LongitudinalDataset:
    """Read a long-format delimited text stream.

    Parameters
    ----------
    source : file-like, str path, or iterable of lines
    roles : ColumnRoles
    delimiter : str
    drop_incomplete : bool
        Drop rows with any missing declared cell instead of raising.
    """
    if isinstance(source, str):
        with open(source, newline="", encoding="utf-8") as fh:
            return ingest_long(fh, roles, delimiter, drop_incomplete)

    reader = csv.reader(source, delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("input has no header row") from None
    needed = [roles.id, roles.time, *roles.responses, *roles.covariates]
    missing = [c for c in needed if c not in header]
    if missing:
        raise SchemaError(f"declared columns missing from header: {missing}")
    pos = {c: header.index(c) for c in needed}

    subject, time, resp, cov = [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            row = row + [""] * (len(header) - len(row))
        cells = {c: row[pos[c]].strip() for c in needed}
        absent = [c for c in needed if cells[c].lower() in MISSING_TOKENS]
        if absent:
            if drop_incomplete:
                continue
            raise DataError(f"missing value(s) in {absent} at line {lineno}")
        t = _parse_number(cells[roles.time], lineno, roles.time)
        if not t.is_integer():
            raise ParseError(
                f"time value {cells[roles.time]!r} at line {lineno} is not an integer")
        subject.append(cells[roles.id])
        time.append(int(t))
        resp.append([_parse_number(cells[c], lineno, c) for c in roles.responses])
        cov.append([_parse_number(cells[c], lineno, c) for c in roles.covariates])

    if not subject:
        raise DataError("no complete data rows")
    return LongitudinalDataset(
        subject=np.array(subject, dtype=str),
        time=np.array(time, dtype=np.int64),
        responses=np.array(resp, dtype=float).reshape(len(subject), len(roles.responses)),
        covariates=np.array(cov, dtype=float).reshape(len(subject), len(roles.covariates)),
        response_names=roles.responses,
        covariate_names=roles.covariates,
        id_name=roles.id,
        time_name=roles.time,
    )


def from_arrays(Y, X=None, groups=None, time=None, response_names=None,
                covariate_names=None) -> LongitudinalDataset:
    """Build a dataset from in-memory arrays (rows need not be sorted)."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    m, k = Y.shape
    X = np.empty((m, 0)) if X is None else np.asarray(X, dtype=float).reshape(m, -1)
    if groups is None:
        raise DataError("groups (subject identifiers) are required")
    groups = np.asarray(groups)
    if time is None:
        # position within subject in order of appearance
        time = np.zeros(m, dtype=np.int64)
        seen: dict = {}
        for r, g in enumerate(groups.astype(str)):
            time[r] = seen.get(g, 0)
            seen[g] = time[r] + 1
    response_names = tuple(response_names or (f"y{j + 1}" for j in range(k)))
    covariate_names = tuple(covariate_names or (f"x{l + 1}" for l in range(X.shape[1])))
    return LongitudinalDataset(groups, np.asarray(time), Y, X, response_names,
                               covariate_names)


@dataclass(frozen=True)
class PreprocessSpec:
    """Analysis/baseline windows and derived-covariate naming.

    ``time_offset`` and ``time_divisor`` define the rescaled time covariate
    ``(time - offset) / divisor``.
    """

    analysis_window: tuple
    baseline_window: tuple
    baseline_names: tuple
    time_offset: float = 0.0
    time_divisor: float = 1.0
    time_name: str = "week"

    def __post_init__(self):
        a0, a1 = self.analysis_window
        b0, b1 = self.baseline_window
        if a0 > a1 or b0 > b1:
            raise SpecError("window bounds must satisfy start <= end")
        if not b1 < a0:
            raise SpecError("baseline window must end before the analysis window starts")
        if self.time_divisor == 0:
            raise SpecError("time divisor must be non-zero")
        object.__setattr__(self, "baseline_names", tuple(self.baseline_names))


def preprocess_baseline(data: LongitudinalDataset, spec: PreprocessSpec) -> LongitudinalDataset:
    """Restrict to the analysis window and append baseline means and rescaled time.

    One baseline covariate per response holds the subject's mean response over
    the baseline window; it is constant within subject.
    """
    if len(spec.baseline_names) != data.k:
        raise SpecError(
            f"need one baseline name per response ({data.k}), got {len(spec.baseline_names)}")
    clash = set(spec.baseline_names + (spec.time_name,)) & set(
        data.covariate_names + data.response_names)
    if clash:
        raise SpecError(f"derived covariate names clash with existing columns: {sorted(clash)}")

    b0, b1 = spec.baseline_window
    a0, a1 = spec.analysis_window
    in_base = (data.time >= b0) & (data.time <= b1)
    in_win = (data.time >= a0) & (data.time <= a1)

    starts = data.cluster_starts
    sizes = np.diff(starts)
    cluster_of_row = np.repeat(np.arange(data.n_subjects), sizes)
    n_base = np.bincount(cluster_of_row, weights=in_base, minlength=data.n_subjects)
    n_win = np.bincount(cluster_of_row, weights=in_win, minlength=data.n_subjects)
    ids = [str(s) for s in data.subject_ids]
    if np.any(n_base == 0):
        bad = [s for s, n in zip(ids, n_base) if n == 0]
        raise DataError(f"subjects with empty baseline window: {bad}")
    if np.any(n_win == 0):
        bad = [s for s, n in zip(ids, n_win) if n == 0]
        raise DataError(f"subjects with no analysis-window rows: {bad}")

    base_sum = np.stack([
        np.bincount(cluster_of_row, weights=data.responses[:, j] * in_base,
                    minlength=data.n_subjects)
        for j in range(data.k)
    ], axis=1)
    base_mean = base_sum / n_base[:, None]

    rows = np.flatnonzero(in_win)
    week = (data.time[rows] - spec.time_offset) / spec.time_divisor
    covariates = np.column_stack([
        data.covariates[rows],
        base_mean[cluster_of_row[rows]],
        week,
    ])
    return LongitudinalDataset(
        subject=data.subject[rows],
        time=data.time[rows],
        responses=data.responses[rows],
        covariates=covariates,
        response_names=data.response_names,
        covariate_names=data.covariate_names + spec.baseline_names + (spec.time_name,),
        id_name=data.id_name,
        time_name=data.time_name,
    )


def read_roles_config(lines: Iterable[str]) -> dict:
    """Parse a plain ``key=value`` config file; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"config line {n}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def split_names(value: Optional[str]) -> Sequence[str]:
    if value is None or value == "":
        return ()
    return tuple(v.strip() for v in value.split(",") if v.strip())

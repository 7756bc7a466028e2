"""Categorical data ingestion, contingency tables and statistical-call metering."""
from __future__ import annotations

import csv
import io
import threading
from dataclasses import dataclass, field
from math import prod
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

DEFAULT_CELL_BUDGET = 2**20
MISSING_TOKENS = ("", "?", "NA", "NaN")


class DataFormatError(ValueError):
    """Raised for malformed delimited input."""


class TableTooLarge(ValueError):
    """Raised when a requested contingency table exceeds the cell budget."""


class CallMeter:
    """Counts raw-data table builds and G-statistic evaluations.

    Both counters only ever go up; updates are guarded by a lock so that
    concurrent table builds leave consistent totals.
    """

    def __init__(self) -> None:
        self.data_calls = 0
        self.test_calls = 0
        self._lock = threading.Lock()

    def add_data_call(self) -> None:
        with self._lock:
            self.data_calls += 1

    def add_test_call(self) -> None:
        with self._lock:
            self.test_calls += 1

    def snapshot(self) -> dict[str, int]:
        return {"data_calls": self.data_calls, "test_calls": self.test_calls}


@dataclass
class Dataset:
    names: list[str]
    cardinalities: list[int]
    rows: np.ndarray
    levels: list[list[str]] = field(default_factory=list)
    meter: CallMeter = field(default_factory=CallMeter, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=np.int64)
        if self.rows.ndim != 2:
            raise DataFormatError("rows must be a 2-d array")
        d = len(self.names)
        if len(set(self.names)) != d:
            raise DataFormatError("duplicate variable names")
        if len(self.cardinalities) != d or self.rows.shape[1] != d:
            raise DataFormatError("names, cardinalities and row width disagree")
        for j, card in enumerate(self.cardinalities):
            if card < 1:
                raise DataFormatError(f"variable {self.names[j]!r} has no states")
            col = self.rows[:, j]
            if col.size and (col.min() < 0 or col.max() >= card):
                raise DataFormatError(f"codes of {self.names[j]!r} outside [0, {card})")
        if not self.levels:
            self.levels = [[str(k) for k in range(c)] for c in self.cardinalities]

    @property
    def n_rows(self) -> int:
        return int(self.rows.shape[0])

    @property
    def d(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def reorder(self, order: Sequence[int]) -> "Dataset":
        """Return a copy with columns permuted by ``order`` (fresh meter)."""
        order = list(order)
        if sorted(order) != list(range(self.d)):
            raise ValueError(f"order {order} is not a permutation of 0..{self.d - 1}")
        return Dataset(
            names=[self.names[k] for k in order],
            cardinalities=[self.cardinalities[k] for k in order],
            rows=self.rows[:, order],
            levels=[list(self.levels[k]) for k in order],
        )


@dataclass(frozen=True)
class ContingencyTable:
    vars: tuple[int, ...]
    dims: tuple[int, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def axis(self, var: int) -> int:
        return self.vars.index(var)


def _read_records(source) -> list[list[str]]:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            raw = fh.read()
    else:
        raw = source.read()
    text = raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DataFormatError("missing header row")
    delimiter = "\t" if "\t" in lines[0] else ","
    return [rec for rec in csv.reader(io.StringIO(text), delimiter=delimiter)]


def load_table(source: IO | str | Path, missing: Iterable[str] = MISSING_TOKENS) -> Dataset:
    """Read delimited text (comma or tab, chosen from the header) into a Dataset.

    Tokens are coded 0, 1, ... per column in order of first appearance. Tokens
    listed in ``missing`` are rejected; pass ``missing=()`` to keep them as
    ordinary categories.
    """
    records = _read_records(source)
    header = [h.strip() for h in records[0]]
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise DataFormatError(f"duplicate header names: {dupes}")
    missing = set(missing)
    body = [r for r in records[1:] if r and any(tok.strip() for tok in r)]
    if not body:
        raise DataFormatError("empty data body")
    d = len(header)
    levels: list[dict[str, int]] = [{} for _ in range(d)]
    rows = np.empty((len(body), d), dtype=np.int64)
    for r, rec in enumerate(body):
        if len(rec) != d:
            raise DataFormatError(f"row {r + 2}: expected {d} fields, found {len(rec)}")
        for j, tok in enumerate(rec):
            tok = tok.strip()
            if tok in missing:
                raise DataFormatError(f"row {r + 2}: missing value {tok!r} in column {header[j]!r}")
            rows[r, j] = levels[j].setdefault(tok, len(levels[j]))
    return Dataset(
        names=header,
        cardinalities=[len(lv) for lv in levels],
        rows=rows,
        levels=[list(lv) for lv in levels],
    )


def load_count_table(source: IO | str | Path, count_column: str = "count") -> Dataset:
    """Read a frequency table (one row per cell plus a count column) and expand it."""
    records = _read_records(source)
    header = [h.strip() for h in records[0]]
    if count_column not in header:
        raise DataFormatError(f"no {count_column!r} column")
    c = header.index(count_column)
    lines = [header[:c] + header[c + 1:]]
    for r, rec in enumerate(records[1:]):
        if not rec:
            continue
        if len(rec) != len(header):
            raise DataFormatError(f"row {r + 2}: expected {len(header)} fields, found {len(rec)}")
        try:
            n = int(rec[c])
        except ValueError:
            raise DataFormatError(f"row {r + 2}: bad count {rec[c]!r}") from None
        if n < 0:
            raise DataFormatError(f"row {r + 2}: negative count")
        lines.extend([rec[:c] + rec[c + 1:]] * n)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(lines)
    return load_table(io.StringIO(buf.getvalue()))


def dump_rows(ds: Dataset, fh: IO[str], delimiter: str = ",") -> None:
    """Write ``ds`` back out with its original tokens."""
    writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    writer.writerow(ds.names)
    for row in ds.rows:
        writer.writerow([ds.levels[j][code] for j, code in enumerate(row)])


def _check_vars(vars: Sequence[int], d: int) -> tuple[int, ...]:
    vars = tuple(int(v) for v in vars)
    if not vars:
        raise ValueError("empty variable list")
    if len(set(vars)) != len(vars):
        raise ValueError(f"duplicate variable index in {vars}")
    for v in vars:
        if not 0 <= v < d:
            raise ValueError(f"variable index {v} out of range 0..{d - 1}")
    return vars


def counts(ds: Dataset, vars: Sequence[int], max_cells: int = DEFAULT_CELL_BUDGET,
           meter: CallMeter | None = None) -> ContingencyTable:
    """Joint cell counts of ``vars`` straight from the data matrix (one data call on ``meter``, default ``ds.meter``)."""
    vars = _check_vars(vars, ds.d)
    dims = tuple(ds.cardinalities[v] for v in vars)
    size = prod(dims)
    if size > max_cells:
        raise TableTooLarge(f"table over {len(vars)} variables needs {size} cells (budget {max_cells})")
    (meter or ds.meter).add_data_call()
    if ds.n_rows:
        flat = np.ravel_multi_index(tuple(ds.rows[:, v] for v in vars), dims)
        cells = np.bincount(flat, minlength=size)
    else:
        cells = np.zeros(size, dtype=np.int64)
    cells = cells.reshape(dims)
    cells.flags.writeable = False
    return ContingencyTable(vars, dims, cells)


def marginalize(t: ContingencyTable, keep: Sequence[int]) -> ContingencyTable:
    """Sum ``t`` down to the variables in ``keep`` (in that order). No data call."""
    keep = tuple(keep)
    if not keep:
        raise ValueError("keep must be non-empty")
    if len(set(keep)) != len(keep) or not set(keep) <= set(t.vars):
        raise ValueError(f"{keep} is not a subset of table variables {t.vars}")
    drop = tuple(a for a, v in enumerate(t.vars) if v not in keep)
    cells = t.counts.sum(axis=drop) if drop else t.counts
    remaining = [v for v in t.vars if v in keep]
    cells = np.transpose(cells, [remaining.index(v) for v in keep])
    cells = np.ascontiguousarray(cells)
    cells.flags.writeable = False
    return ContingencyTable(keep, tuple(t.dims[t.axis(v)] for v in keep), cells)


class TableCache:
    """Hands out tables, building from raw data only when no cached superset exists.

    Builds are charged to ``meter``, which defaults to the dataset's own meter.
    """

    def __init__(self, ds: Dataset, max_cells: int = DEFAULT_CELL_BUDGET, meter: CallMeter | None = None) -> None:
        self.ds = ds
        self.meter = meter or ds.meter
        self.max_cells = max_cells
        self._built: dict[frozenset[int], ContingencyTable] = {}
        self._derived: dict[frozenset[int], ContingencyTable] = {}
        self._lock = threading.Lock()

    def cells(self, vars: Iterable[int]) -> int:
        return prod(self.ds.cardinalities[v] for v in vars)

    def has_superset(self, vars: Iterable[int]) -> bool:
        key = frozenset(vars)
        return any(key <= k for k in self._built)

    def build(self, vars: Iterable[int]) -> ContingencyTable:
        """Force a raw-data build over ``vars`` (sorted) unless one is already cached."""
        key = frozenset(vars)
        with self._lock:
            if key not in self._built:
                self._built[key] = counts(self.ds, sorted(key), self.max_cells, self.meter)
            return self._built[key]

    def table(self, vars: Sequence[int]) -> ContingencyTable:
        key = frozenset(vars)
        with self._lock:
            t = self._built.get(key) or self._derived.get(key)
            if t is None:
                supers = [k for k in self._built if key <= k]
                if supers:
                    parent = self._built[min(supers, key=lambda k: (self.cells(k), sorted(k)))]
                    t = marginalize(parent, sorted(key))
                    self._derived[key] = t
                else:
                    t = counts(self.ds, sorted(key), self.max_cells, self.meter)
                    self._built[key] = t
        if tuple(vars) != t.vars:
            t = marginalize(t, vars)
        return t


def fixture_path(name: str) -> Path:
    return Path(__file__).resolve().parent / "fixtures" / name


def load_wam(expanded: bool = False) -> Dataset:
    """The six-variable 'Women and Mathematics' survey (1190 respondents).

    Codes follow the first-listed category of each variable: A lecture
    (y, n), B gender (female, male), C school (suburban, urban), D needs
    mathematics (y, n), E preference (math, arts), F plans (college, job).
    """
    if expanded:
        return load_table(fixture_path("wam_rows.csv"))
    return load_count_table(fixture_path("wam_counts.tsv"))

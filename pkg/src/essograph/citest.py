"""G-squared conditional-independence testing and the write-once CI ledger.

The ledger stores a ternary value per statement ``(i, j; S)``: 0 for accepted
independence, 1 for accepted dependence, 2 (absent) for undetermined. With
consistency checking switched on, an independence is accepted only when the
raw test passes *and* it agrees with every lower-order statement already
accepted over the same variables.
"""
from __future__ import annotations

import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Iterator, Sequence

import numpy as np

from .data import DEFAULT_CELL_BUDGET, CallMeter, ContingencyTable, Dataset, TableCache, TableTooLarge

INDEPENDENT = 0
DEPENDENT = 1
UNDETERMINED = 2
MIN_CELL = 5

Key = tuple[int, int, tuple[int, ...]]


class ProtocolError(RuntimeError):
    """A lower-order statement needed for a decision has not been settled yet."""


class WriteOnceViolation(RuntimeError):
    pass


def canonical_key(i: int, j: int, S: Iterable[int] = ()) -> Key:
    i, j = int(i), int(j)
    if i == j:
        raise ValueError(f"statement needs two distinct variables, got {i} twice")
    S = tuple(sorted(int(s) for s in S))
    if i in S or j in S:
        raise ValueError(f"conditioning set {S} contains {i} or {j}")
    if len(set(S)) != len(S):
        raise ValueError(f"repeated variable in conditioning set {S}")
    return (min(i, j), max(i, j), S)


# --------------------------------------------------------------------------
# chi-squared distribution

def _gamma_p_series(a: float, x: float) -> float:
    term = total = 1.0 / a
    ap = a
    for _ in range(10000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_cf(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for n in range(1, 10000):
        an = -n * (n - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def regularized_gamma_p(a: float, x: float) -> float:
    """Lower regularized incomplete gamma function P(a, x)."""
    if a <= 0:
        raise ValueError("shape must be positive")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_p_series(a, x)
    return 1.0 - _gamma_q_cf(a, x)


def chi2_cdf(x: float, df: int) -> float:
    return regularized_gamma_p(df / 2.0, x / 2.0)


@lru_cache(maxsize=4096)
def chi2_quantile(df: int, p: float) -> float:
    """Inverse chi-squared CDF: the x with ``chi2_cdf(x, df) == p``.

    Bracketed Newton iteration with bisection fallback; the bracket is
    shrunk until it is narrower than 1e-10.
    """
    if df != int(df) or df <= 0:
        raise ValueError(f"degrees of freedom must be a positive integer, got {df}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    df = int(df)
    lo, hi = 0.0, max(1.0, float(df))
    while chi2_cdf(hi, df) < p:
        lo, hi = hi, hi * 2.0
    x = 0.5 * (lo + hi)
    k = df / 2.0
    log_norm = k * math.log(2.0) + math.lgamma(k)
    for _ in range(500):
        f = chi2_cdf(x, df) - p
        if f > 0:
            hi = x
        else:
            lo = x
        if hi - lo < 1e-10:
            break
        pdf = math.exp((k - 1.0) * math.log(x) - x / 2.0 - log_norm) if x > 0 else 0.0
        step = x - f / pdf if pdf > 0 else lo - 1.0
        x = step if lo < step < hi else 0.5 * (lo + hi)
    return 0.5 * (lo + hi) if hi - lo < 1e-10 else x


# --------------------------------------------------------------------------
# the test statistic

@dataclass(frozen=True)
class TestResult:
    """Outcome of one G-squared evaluation.

    ``critical`` and ``decision`` are ``None`` for a bare statistic. ``refused``
    marks a request whose table exceeded the cell budget; such a statement is
    treated as dependent without any statistic being computed.
    """

    g: float
    df: int
    n_valid_strata: int
    critical: float | None = None
    decision: int | None = None
    refused: bool = False

    __test__ = False


def g_statistic(t: ContingencyTable, x: int, y: int) -> TestResult:
    """G-squared statistic of ``x`` against ``y`` given the remaining variables of ``t``.

    Only strata in which every (x, y) cell holds at least five observations
    contribute, both to the statistic and to the degrees of freedom.
    """
    if x == y:
        raise ValueError("x and y must differ")
    a, b = min(x, y), max(x, y)
    rest = sorted(v for v in t.vars if v not in (a, b))
    cells = np.transpose(t.counts, [t.axis(a), t.axis(b)] + [t.axis(v) for v in rest])
    ka, kb = cells.shape[0], cells.shape[1]
    cells = cells.reshape(ka, kb, -1).astype(np.float64)
    valid = (cells >= MIN_CELL).all(axis=(0, 1))
    n_valid = int(valid.sum())
    df = n_valid * (ka - 1) * (kb - 1)
    if n_valid == 0:
        return TestResult(0.0, 0, 0)
    n = cells[:, :, valid]
    n_as = n.sum(axis=1, keepdims=True)
    n_bs = n.sum(axis=0, keepdims=True)
    n_s = n.sum(axis=(0, 1), keepdims=True)
    terms = n * np.log(n * n_s / (n_as * n_bs))
    g = 2.0 * float(terms.sum())
    return TestResult(max(g, 0.0), df, n_valid)


def decide(res: TestResult, alpha: float) -> TestResult:
    """Attach critical value and decision to a bare statistic."""
    if res.refused or res.n_valid_strata == 0:
        return TestResult(res.g, res.df, res.n_valid_strata, math.inf, DEPENDENT, res.refused)
    if res.df == 0:
        # a variable with a single observed state: nothing to test against
        return TestResult(res.g, 0, res.n_valid_strata, 0.0, INDEPENDENT)
    crit = chi2_quantile(res.df, 1.0 - alpha)
    decision = INDEPENDENT if res.g <= crit else DEPENDENT
    return TestResult(res.g, res.df, res.n_valid_strata, crit, decision)


def raw_decision(ds: Dataset | TableCache, i: int, j: int, S: Sequence[int] = (), alpha: float = 0.05) -> TestResult:
    """Run the raw G-squared test of ``i`` against ``j`` given ``S``."""
    cache = ds if isinstance(ds, TableCache) else TableCache(ds)
    key = canonical_key(i, j, S)
    try:
        t = cache.table([key[0], key[1], *key[2]])
    except TableTooLarge:
        return decide(TestResult(0.0, 0, 0, refused=True), alpha)
    cache.meter.add_test_call()
    return decide(g_statistic(t, key[0], key[1]), alpha)


# --------------------------------------------------------------------------
# the ledger

def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ESSOGRAPH_THREADS", "1")))
    except ValueError:
        return 1


class CiLedger:
    """Write-once store of CI decisions backed by a dataset.

    Parameters
    ----------
    ds : Dataset
        Source data. Table builds and statistic evaluations are counted on a
        meter owned by the ledger, so runs sharing a dataset count separately.
    alpha : float
        Significance level of every raw test.
    max_cond : int
        Largest conditioning set that is ever tested. Larger requests come
        back dependent and are not stored.
    consistency : bool
        Use the hierarchical consistency-checked procedure (True) or plain
        raw tests (False).
    max_cells : int
        Cell budget for contingency tables.
    """

    def __init__(
        self,
        ds: Dataset,
        alpha: float = 0.05,
        max_cond: int = 3,
        consistency: bool = True,
        max_cells: int = DEFAULT_CELL_BUDGET,
    ) -> None:
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if max_cond < 0:
            raise ValueError("max_cond must be non-negative")
        self.ds = ds
        self.alpha = alpha
        self.max_cond = max_cond
        self.consistency = consistency
        self.cache = TableCache(ds, max_cells, CallMeter())
        self.entries: dict[Key, int] = {}
        self.results: dict[Key, TestResult] = {}
        self.journal: list[tuple[Key, int]] = []
        self.sepsets: dict[tuple[int, int], tuple[int, ...]] = {}
        self._done_footprints: set[frozenset[int]] = set()
        self._pool: frozenset[int] | None = None
        self._workers = _threads()

    @property
    def meter(self) -> CallMeter:
        return self.cache.meter

    @property
    def d(self) -> int:
        return self.ds.d

    # -- storage ----------------------------------------------------------
    def get(self, i: int, j: int, S: Iterable[int] = ()) -> int:
        return self.entries.get(canonical_key(i, j, S), UNDETERMINED)

    def _commit(self, key: Key, value: int) -> None:
        old = self.entries.get(key)
        if old is not None:
            if old != value:
                raise WriteOnceViolation(f"{key} already {old}, refusing {value}")
            return
        self.entries[key] = value
        self.journal.append((key, value))

    def set_sepset(self, i: int, j: int, S: Iterable[int]) -> None:
        key = canonical_key(i, j, S)
        if self.entries.get(key) != INDEPENDENT:
            raise ProtocolError(f"separating set recorded for {key} without an accepted independence")
        self.sepsets[(key[0], key[1])] = key[2]

    def sepset(self, i: int, j: int) -> tuple[int, ...] | None:
        return self.sepsets.get((min(i, j), max(i, j)))

    @contextmanager
    def pool(self, vars: Iterable[int]):
        """Within this block, tables for statements inside ``vars`` come from one joint table."""
        outer = self._pool
        self._pool = frozenset(vars)
        try:
            yield self
        finally:
            self._pool = outer

    # -- raw tests --------------------------------------------------------
    def raw(self, i: int, j: int, S: Iterable[int] = ()) -> TestResult:
        """Cached raw test; the statistic is evaluated at most once per statement."""
        key = canonical_key(i, j, S)
        res = self.results.get(key)
        if res is None:
            res = self._compute(key)
            self.results[key] = res
        return res

    def _table_for(self, key: Key) -> ContingencyTable:
        vars = [key[0], key[1], *key[2]]
        fp = frozenset(vars)
        pool = self._pool
        if pool is not None and fp <= pool and not self.cache.has_superset(fp):
            try:
                self.cache.build(pool)
            except TableTooLarge:
                pass
        return self.cache.table(vars)

    def _compute(self, key: Key) -> TestResult:
        try:
            t = self._table_for(key)
        except TableTooLarge:
            return decide(TestResult(0.0, 0, 0, refused=True), self.alpha)
        self.meter.add_test_call()
        return decide(g_statistic(t, key[0], key[1]), self.alpha)

    def _compute_many(self, keys: list[Key]) -> None:
        todo = [k for k in keys if k not in self.results]
        if not todo:
            return
        if self._workers > 1 and len(todo) > 1:
            # build every table serially first so that data-call counts do not
            # depend on thread scheduling, then evaluate statistics in parallel
            tables = {}
            for k in todo:
                try:
                    tables[k] = self._table_for(k)
                except TableTooLarge:
                    tables[k] = None

            def run(k: Key) -> TestResult:
                t = tables[k]
                if t is None:
                    return decide(TestResult(0.0, 0, 0, refused=True), self.alpha)
                self.meter.add_test_call()
                return decide(g_statistic(t, k[0], k[1]), self.alpha)

            with ThreadPoolExecutor(self._workers) as ex:
                for k, res in zip(todo, ex.map(run, todo)):
                    self.results[k] = res
        else:
            for k in todo:
                self.results[k] = self._compute(k)

    # -- decisions --------------------------------------------------------
    def condition_xi(self, i: int, j: int, S: Iterable[int] = ()) -> bool:
        """Raw test accepts independence and no accepted lower-order statement vetoes it.

        For each Z in S: if ``A(i,Z; S-Z) = 0`` or ``A(j,Z; S-Z) = 0`` then
        ``A(i,j; S-Z)`` must be 0 as well.
        """
        a, b, S = canonical_key(i, j, S)
        if self.raw(a, b, S).decision != INDEPENDENT:
            return False
        for z in S:
            rest = tuple(s for s in S if s != z)
            here = self.get(a, b, rest)
            side_a = self.get(a, z, rest)
            side_b = self.get(b, z, rest)
            if UNDETERMINED in (here, side_a, side_b):
                raise ProtocolError(f"lower-order statements over {(a, b, rest)} with {z} not settled")
            if (side_a == INDEPENDENT or side_b == INDEPENDENT) and here != INDEPENDENT:
                return False
        return True

    def determine(self, i: int, j: int, S: Iterable[int] = ()) -> int:
        """Settle ``A(i, j; S)`` and return it (0 independent, 1 dependent)."""
        key = canonical_key(i, j, S)
        if len(key[2]) > self.max_cond:
            return DEPENDENT
        val = self.entries.get(key)
        if val is not None:
            return val
        if not self.consistency:
            val = self.raw(*key).decision
            self._commit(key, val)
            return val
        footprint = frozenset((key[0], key[1], *key[2]))
        outer = self._pool
        if outer is None or not footprint <= outer:
            self._pool = footprint
        try:
            for size in range(2, len(footprint) + 1):
                for sub in combinations(sorted(footprint), size):
                    self._settle_footprint(frozenset(sub))
        finally:
            self._pool = outer
        return self.entries[key]

    def _settle_footprint(self, fp: frozenset[int]) -> None:
        """Decide every statement whose variables are exactly ``fp``.

        All statements over proper subsets of ``fp`` are settled beforehand.
        """
        if fp in self._done_footprints:
            return
        members = sorted(fp)
        keys = []
        for a, b in combinations(members, 2):
            key = (a, b, tuple(v for v in members if v != a and v != b))
            if key not in self.entries:
                keys.append(key)
        if self._workers > 1:
            self._compute_many(keys)
        provisional = {k: (INDEPENDENT if self.condition_xi(*k) else DEPENDENT) for k in keys}
        # among conflicting independences the larger G stays independent;
        # equal G keeps the lexicographically smaller key
        zeros = sorted((k for k, v in provisional.items() if v == INDEPENDENT),
                       key=lambda k: (-self.results[k].g, k))
        kept: list[Key] = []
        for k in zeros:
            if any(self._conflict(k, other) for other in kept):
                provisional[k] = DEPENDENT
            else:
                kept.append(k)
        for k in sorted(provisional):
            self._commit(k, provisional[k])
        self._done_footprints.add(fp)

    def _conflict(self, k1: Key, k2: Key) -> bool:
        """Two independences over one footprint sharing an endpoint X.

        ``X _|_ Y | S`` together with ``X _|_ Z | S + Y - Z`` forces
        ``X _|_ {Y, Z} | S - Z``, so both statements conditioned on the set
        without Y and Z must be independences.
        """
        shared = {k1[0], k1[1]} & {k2[0], k2[1]}
        if len(shared) != 1:
            return False
        (x,) = shared
        y = k1[0] if k1[1] == x else k1[1]
        z = k2[0] if k2[1] == x else k2[1]
        rest = tuple(v for v in k1[2] if v != z)
        return self.get(x, y, rest) == DEPENDENT or self.get(x, z, rest) == DEPENDENT

    # -- reporting --------------------------------------------------------
    def stats(self) -> dict:
        vals = list(self.entries.values())
        return {
            "entries": len(vals),
            "independent": vals.count(INDEPENDENT),
            "dependent": vals.count(DEPENDENT),
            "max_order": max((len(k[2]) for k in self.entries), default=-1),
        }

    def dump_lines(self) -> list[str]:
        lines = []
        for key in sorted(self.entries, key=lambda k: (len(k[2]), k)):
            res = self.results.get(key)
            g = f"{res.g:.6f}" if res is not None else "nan"
            df = res.df if res is not None else -1
            cond = " ".join(str(s) for s in key[2])
            lines.append(f"A {key[0]} {key[1]} | {cond} = {self.entries[key]}  g={g} df={df}".replace("|  =", "| ="))
        return lines

    def dump(self) -> str:
        return "".join(line + "\n" for line in self.dump_lines())


_DUMP_LINE = re.compile(r"^A\s+(\d+)\s+(\d+)\s*\|\s*([\d\s]*?)\s*=\s*([012])\b")


def parse_dump(text: str) -> dict[Key, int]:
    """Read ledger entries from the line format written by :meth:`CiLedger.dump`."""
    entries: dict[Key, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        m = _DUMP_LINE.match(line)
        if m is None:
            raise ValueError(f"line {lineno}: cannot parse {line!r}")
        S = [int(s) for s in m.group(3).split()]
        key = canonical_key(int(m.group(1)), int(m.group(2)), S)
        val = int(m.group(4))
        if val == UNDETERMINED:
            continue
        if entries.get(key, val) != val:
            raise ValueError(f"line {lineno}: conflicting values for {key}")
        entries[key] = val
    return entries


def audit_closure(ledger: CiLedger | dict[Key, int]) -> list[tuple[Key, Key, Key]]:
    """Find settled statements that break the weak-union/contraction closure.

    Returns every triple of keys ``(A(X,Y; Z+W) = 0, A(Y,W; Z) = 0, A(X,Y; Z) = 1)``;
    an empty list means the ledger is closed.
    """
    entries = ledger.entries if isinstance(ledger, CiLedger) else ledger
    out = []
    for key, val in sorted(entries.items()):
        if val != INDEPENDENT or not key[2]:
            continue
        x, y, S = key
        for w in S:
            Z = tuple(s for s in S if s != w)
            lower = canonical_key(x, y, Z)
            if entries.get(lower) != DEPENDENT:
                continue
            for end in (x, y):
                side = canonical_key(end, w, Z)
                if entries.get(side) == INDEPENDENT:
                    out.append((key, side, lower))
    return out


def iter_statements(d: int, max_order: int) -> Iterator[Key]:
    """All canonical statements over ``d`` variables up to a conditioning size."""
    for order in range(max_order + 1):
        for a, b in combinations(range(d), 2):
            others = [v for v in range(d) if v != a and v != b]
            for S in combinations(others, order):
                yield (a, b, S)

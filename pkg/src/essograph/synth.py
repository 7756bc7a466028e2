"""Synthetic experiments: random DAGs, CPT sampling, forward sampling and a perfect CI oracle.

A trial draws a DAG, learns from either its d-separation oracle or from
data sampled through it, and scores the result against the true
essential graph.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import IO, Iterable, Iterator

import numpy as np

from .citest import DEPENDENT, INDEPENDENT, UNDETERMINED, ProtocolError, audit_closure, canonical_key
from .data import CallMeter, Dataset
from .graph import MixedGraph, d_separated, dag, essential_graph_of, immoralities, topological_order


class ConfigError(ValueError):
    """Malformed experiment configuration."""


# --------------------------------------------------------------------------
# generators

def random_dag(d: int, edge_prob: float, max_parents: int | None = None, seed: int = 0) -> MixedGraph:
    """Random DAG over a uniformly drawn topological order.

    Every ordered pair (earlier, later) becomes an edge with probability
    ``edge_prob`` unless the later node already has ``max_parents`` parents.
    Candidate parents are visited in order position.
    """
    if d < 0:
        raise ValueError("d must be non-negative")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError("edge_prob must lie in [0, 1]")
    cap = d if max_parents is None else max_parents
    rng = np.random.default_rng(seed)
    order = [int(v) for v in rng.permutation(d)]
    edges = []
    for b in range(d):
        child = order[b]
        draws = rng.random(b)
        n_pa = 0
        for a in range(b):
            if draws[a] < edge_prob and n_pa < cap:
                edges.append((order[a], child))
                n_pa += 1
    return dag(d, edges)


@dataclass
class Cpts:
    """Conditional probability tables of a discrete Bayesian network.

    ``tables[v]`` has shape ``(configs, cardinalities[v])``; row ``r`` is the
    distribution of ``v`` for parent configuration ``r``, where configurations
    enumerate ``parents[v]`` (sorted) in C order.
    """

    parents: list[tuple[int, ...]]
    cardinalities: list[int]
    tables: list[np.ndarray]

    def __post_init__(self) -> None:
        for v, t in enumerate(self.tables):
            want = (int(np.prod([self.cardinalities[p] for p in self.parents[v]], dtype=np.int64)), self.cardinalities[v])
            if t.shape != want:
                raise ValueError(f"table of node {v} has shape {t.shape}, expected {want}")
            if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-12):
                raise ValueError(f"rows of node {v} are not probability vectors")


def sample_cpts(g: MixedGraph, cardinalities: int | Iterable[int] = 2, concentration: float = 1.0, seed: int = 0) -> Cpts:
    """Draw every CPT row as normalized gamma variates (a symmetric Dirichlet).

    Small ``concentration`` gives rows near the simplex corners and hence
    strong dependencies.
    """
    if not g.is_dag():
        raise ValueError("sample_cpts needs a DAG")
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    cards = [int(cardinalities)] * g.n if isinstance(cardinalities, (int, np.integer)) else [int(c) for c in cardinalities]
    if len(cards) != g.n or min(cards, default=2) < 1:
        raise ValueError("need one positive cardinality per node")
    rng = np.random.default_rng(seed)
    parents, tables = [], []
    for v in range(g.n):
        pa = tuple(sorted(g.parents(v)))
        rows = int(np.prod([cards[p] for p in pa], dtype=np.int64))
        draw = rng.gamma(concentration, size=(rows, cards[v]))
        # guard against every draw underflowing to zero at tiny concentration
        draw[draw.sum(axis=1) == 0] = 1.0
        tables.append(draw / draw.sum(axis=1, keepdims=True))
        parents.append(pa)
    return Cpts(parents, cards, tables)


def forward_sample(g: MixedGraph, cpts: Cpts, n: int, seed: int = 0, names: list[str] | None = None) -> Dataset:
    """Ancestral sampling of ``n`` rows."""
    if n <= 0:
        raise ValueError("forward_sample needs n >= 1")
    order = topological_order(g)
    if order is None:
        raise ValueError("forward_sample needs a DAG")
    rng = np.random.default_rng(seed)
    rows = np.zeros((n, g.n), dtype=np.int64)
    for v in order:
        pa = cpts.parents[v]
        if pa:
            config = np.ravel_multi_index(tuple(rows[:, p] for p in pa), [cpts.cardinalities[p] for p in pa])
        else:
            config = np.zeros(n, dtype=np.int64)
        cum = np.cumsum(cpts.tables[v], axis=1)[config]
        u = rng.random(n)
        rows[:, v] = np.minimum((u[:, None] >= cum).sum(axis=1), cpts.cardinalities[v] - 1)
    names = names or [f"X{v}" for v in range(g.n)]
    return Dataset(names=list(names), cardinalities=list(cpts.cardinalities), rows=rows)


# --------------------------------------------------------------------------
# perfect CI source

class OracleLedger:
    """CI source answering from d-separation in a known DAG.

    Drop-in replacement for :class:`essograph.citest.CiLedger` in the learner.
    ``meter.test_calls`` counts distinct statements asked.
    """

    consistency = True

    def __init__(self, g: MixedGraph, max_cond: int | None = None) -> None:
        if not g.is_dag():
            raise ValueError("the oracle needs a DAG")
        self.g = g
        self.max_cond = max(g.n - 2, 0) if max_cond is None else max_cond
        self.meter = CallMeter()
        self.entries: dict = {}
        self.sepsets: dict[tuple[int, int], tuple[int, ...]] = {}

    @property
    def d(self) -> int:
        return self.g.n

    def get(self, i: int, j: int, S: Iterable[int] = ()) -> int:
        return self.entries.get(canonical_key(i, j, S), UNDETERMINED)

    def determine(self, i: int, j: int, S: Iterable[int] = ()) -> int:
        key = canonical_key(i, j, S)
        if len(key[2]) > self.max_cond:
            return DEPENDENT
        val = self.entries.get(key)
        if val is None:
            self.meter.add_test_call()
            val = INDEPENDENT if d_separated(self.g, key[0], key[1], key[2]) else DEPENDENT
            self.entries[key] = val
        return val

    def set_sepset(self, i: int, j: int, S: Iterable[int]) -> None:
        key = canonical_key(i, j, S)
        if self.entries.get(key) != INDEPENDENT:
            raise ProtocolError(f"separating set recorded for {key} without an accepted independence")
        self.sepsets[(key[0], key[1])] = key[2]

    def sepset(self, i: int, j: int) -> tuple[int, ...] | None:
        return self.sepsets.get((min(i, j), max(i, j)))

    @contextmanager
    def pool(self, vars: Iterable[int]) -> Iterator["OracleLedger"]:
        yield self


def oracle_ledger(g: MixedGraph, max_cond: int | None = None) -> OracleLedger:
    return OracleLedger(g, max_cond)


# --------------------------------------------------------------------------
# scoring

@dataclass(frozen=True)
class StructDiff:
    """Differences between a learned graph and the essential graph of the truth.

    ``directed_mismatches`` counts edges present in both skeletons whose
    marks differ (directed one way, the other way, or undirected).
    """

    extra_edges: int
    missing_edges: int
    immorality_diff: int
    directed_mismatches: int

    @property
    def zero(self) -> bool:
        return not (self.extra_edges or self.missing_edges or self.immorality_diff or self.directed_mismatches)


def _mark(g: MixedGraph, a: int, b: int) -> str:
    if b in g.children(a):
        return ">"
    if a in g.children(b):
        return "<"
    return "-"


def struct_diff(learned: MixedGraph, truth: MixedGraph) -> StructDiff:
    if learned.n != truth.n:
        raise ValueError("graphs have different node counts")
    ess = essential_graph_of(truth)
    ls, ts = learned.skeleton(), ess.skeleton()
    common = ls & ts
    return StructDiff(
        extra_edges=len(ls - ts),
        missing_edges=len(ts - ls),
        immorality_diff=len(immoralities(learned) ^ immoralities(ess)),
        directed_mismatches=sum(_mark(learned, a, b) != _mark(ess, a, b) for a, b in common),
    )


# --------------------------------------------------------------------------
# experiment harness

@dataclass
class ExperimentConfig:
    trials: int = 1
    d: int = 6
    edge_prob: float = 0.3
    max_parents: int = 3
    cardinality: int = 2
    concentration: float = 1.0
    n: int = 1000
    mode: str = "oracle"
    algorithm: str = "m3pc"
    alpha: float = 0.05
    max_cond: int = 3
    consistency: bool = True
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        if self.trials < 0:
            raise ConfigError("trials must be non-negative")
        if self.d < 1:
            raise ConfigError("d must be positive")
        if not 0.0 <= self.edge_prob <= 1.0:
            raise ConfigError("edge_prob must lie in [0, 1]")
        if self.max_parents < 0 or self.cardinality < 2 or self.concentration <= 0:
            raise ConfigError("max_parents >= 0, cardinality >= 2 and concentration > 0 required")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.mode not in ("oracle", "data"):
            raise ConfigError(f"mode must be 'oracle' or 'data', got {self.mode!r}")
        if self.algorithm not in ("m3pc", "mmpc"):
            raise ConfigError(f"algorithm must be 'm3pc' or 'mmpc', got {self.algorithm!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.max_cond < 0:
            raise ConfigError("max_cond must be non-negative")
        return self


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_experiment_config(text: str) -> ExperimentConfig:
    """Read ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    fields = ExperimentConfig.__dataclass_fields__
    kwargs: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kind = type(getattr(ExperimentConfig, key))
        try:
            if kind is bool:
                low = value.lower()
                if low not in _TRUE | _FALSE:
                    raise ValueError(value)
                kwargs[key] = low in _TRUE
            else:
                kwargs[key] = kind(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
    return ExperimentConfig(**kwargs).validate()


def run_trial(cfg: ExperimentConfig, trial: int) -> dict:
    """One independent trial; seeds derive from ``(cfg.seed, trial)`` only."""
    from .learner import LearnConfig, run_m3pc, run_mmpc
    from .orient import UnrecoverableConflict

    s_dag, s_cpt, s_data = (int(x) for x in np.random.SeedSequence([cfg.seed, trial]).generate_state(3))
    truth = random_dag(cfg.d, cfg.edge_prob, cfg.max_parents, s_dag)
    run = run_m3pc if cfg.algorithm == "m3pc" else run_mmpc
    rec = {
        "trial": trial,
        "d": cfg.d,
        "mode": cfg.mode,
        "algorithm": cfg.algorithm,
        "true_edges": len(truth.skeleton()),
    }
    if cfg.mode == "oracle":
        ledger = OracleLedger(truth)
        lc = LearnConfig(max_cond=ledger.max_cond)
        ds = None
    else:
        cpts = sample_cpts(truth, cfg.cardinality, cfg.concentration, s_cpt)
        ds = forward_sample(truth, cpts, cfg.n, s_data)
        lc = LearnConfig(alpha=cfg.alpha, max_cond=cfg.max_cond, consistency=cfg.consistency)
        ledger = lc.make_ledger(ds)
    try:
        result = run(ds, lc, ledger=ledger, d=cfg.d)
    except UnrecoverableConflict as exc:
        rec.update(error="unrecoverable_conflict", cycle=exc.cycle)
    else:
        rec.update(asdict(struct_diff(result.graph, truth)), repaired=bool(result.repair_log))
    rec["audit_violations"] = len(audit_closure(ledger.entries))
    rec.update(ledger.meter.snapshot())
    return rec


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("ESSOGRAPH_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(cfg: ExperimentConfig, out: IO[str], workers: int | None = None) -> list[dict]:
    """Run every trial and write one JSON line each, in trial order."""
    cfg.validate()
    workers = _workers() if workers is None else workers
    idx = range(cfg.trials)
    if workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(run_trial, [cfg] * cfg.trials, idx))
    else:
        results = [run_trial(cfg, t) for t in idx]
    for rec in results:
        out.write(json.dumps(rec, sort_keys=True) + "\n")
    return results


def spurious_edge_rate(d: int = 6, n: int = 2000, seeds: Iterable[int] = range(500), alpha: float = 0.05,
                       concentration: float = 20.0) -> float:
    """Fraction of order-0 tests that reject independence on mutually independent columns."""
    from .citest import raw_decision
    from .data import TableCache

    rejected = total = 0
    empty = MixedGraph(d)
    for seed in seeds:
        cpts = sample_cpts(empty, 2, concentration, seed)
        ds = forward_sample(empty, cpts, n, seed + 1_000_003)
        cache = TableCache(ds)
        for a, b in combinations(range(d), 2):
            rejected += raw_decision(cache, a, b, (), alpha).decision == DEPENDENT
            total += 1
    return rejected / total if total else math.nan

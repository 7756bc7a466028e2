"""Skeleton and immorality discovery.

Two pipelines share the stage functions below:

* the baseline runs stage 1 (grow candidate neighbour sets), a symmetry
  prune, a subset-search elimination and a second symmetry prune, then tests
  each vee-structure separately;
* the full pipeline records separating sets while it grows the candidate
  sets, reads immoralities off them as edges disappear, reconciles
  contradictory immoralities, assembles the graph, propagates forced
  orientations and repairs the result if it is not a valid essential graph.

The CI source is any object with ``determine``, ``set_sepset``, ``sepset``
and ``pool``; :class:`essograph.citest.CiLedger` uses data and
:class:`essograph.synth.OracleLedger` uses d-separation in a known DAG.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

from .citest import INDEPENDENT, CiLedger
from .data import DEFAULT_CELL_BUDGET, Dataset
from .graph import MixedGraph, Triple, immoralities, validate_essential, vee_structures
from .orient import close, repair


@dataclass
class LearnConfig:
    alpha: float = 0.05
    max_cond: int = 3
    consistency: bool = True
    max_cells: int = DEFAULT_CELL_BUDGET

    def make_ledger(self, ds: Dataset) -> CiLedger:
        return CiLedger(ds, self.alpha, self.max_cond, self.consistency, self.max_cells)


@dataclass
class LearnState:
    """Working state threaded through the stages."""

    d: int
    Z: list[set[int]]
    immoralities: set[Triple] = field(default_factory=set)
    snapshots: dict[str, list[list[int]]] = field(default_factory=dict)
    meter: dict[str, dict[str, int]] = field(default_factory=dict)

    def snap(self, label: str, ledger) -> None:
        self.snapshots[label] = [sorted(z) for z in self.Z]
        m = getattr(ledger, "meter", None)
        if m is not None:
            self.meter[label] = m.snapshot()


@dataclass
class LearnResult:
    graph: MixedGraph
    immoralities: frozenset[Triple]
    state: LearnState
    ledger: object
    close_log: list
    repair_log: list
    seconds: float

    def report(self, names: Sequence[str] | None = None) -> dict:
        names = list(names) if names is not None else [str(v) for v in range(self.graph.n)]
        nm = lambda vs: [names[v] for v in vs]  # noqa: E731
        sepsets = getattr(self.ledger, "sepsets", {})
        out = {
            "stages": {label: {names[j]: nm(z) for j, z in enumerate(zs)} for label, zs in self.state.snapshots.items()},
            "immoralities": [nm(t) for t in sorted(self.immoralities)],
            "sepsets": [{"pair": nm(p), "set": nm(s)} for p, s in sorted(sepsets.items())],
            "meter": getattr(self.ledger, "meter").snapshot() if hasattr(self.ledger, "meter") else {},
            "meter_by_stage": self.state.meter,
            "close_log": self.close_log,
            "repair_log": self.repair_log,
            "graph": self.graph.to_dict(names),
        }
        if hasattr(self.ledger, "stats"):
            out["ledger"] = self.ledger.stats()
        return out


# --------------------------------------------------------------------------
# stages

def stage1(ledger, d: int) -> LearnState:
    """Grow each candidate set by testing every other variable given the current set.

    A variable found independent of the target is left out and the
    conditioning set of that test becomes the pair's separating set.
    """
    Z = []
    for j in range(d):
        zj: list[int] = []
        for i in range(d):
            if i == j:
                continue
            if ledger.determine(i, j, zj) == INDEPENDENT:
                ledger.set_sepset(i, j, zj)
            else:
                zj.append(i)
        Z.append(set(zj))
    return LearnState(d, Z)


def stage2(state: LearnState, ledger, track: bool = True) -> LearnState:
    """Symmetry prune; when ``track``, record vee-structures whose middle is outside the separating set."""
    Z = state.Z
    for j in range(state.d):
        for k in range(state.d):
            if k == j or j in Z[k]:
                continue
            if track:
                sep = ledger.sepset(j, k)
                if sep is not None:
                    for y in sorted(Z[j] & Z[k]):
                        if y not in sep:
                            state.immoralities.add((j, y, k))
            Z[j].discard(k)
    return state


def stage3(state: LearnState, ledger, max_cond: int, track: bool = True) -> LearnState:
    """Drop ``i`` from ``Z[j]`` when some subset of the remaining candidates separates them."""
    Z = state.Z
    for j in range(state.d):
        Y = Z[j]
        for i in range(state.d):
            if i not in Y:
                continue
            rest = sorted(Y - {i})
            found = None
            with ledger.pool([j, *Y]):
                for size in range(min(max_cond, len(rest)) + 1):
                    for S in combinations(rest, size):
                        if ledger.determine(i, j, S) == INDEPENDENT:
                            found = S
                            break
                    if found is not None:
                        break
            if found is None:
                continue
            Y.discard(i)
            ledger.set_sepset(i, j, found)
            if track:
                for p in sorted((Y - set(found)) & Z[i]):
                    state.immoralities.add((j, p, i))
    return state


def stage4(state: LearnState) -> LearnState:
    """Final symmetry prune: keep ``k`` in ``Z[j]`` only if ``j`` is in ``Z[k]``."""
    Z = state.Z
    for j in range(state.d):
        for k in sorted(Z[j]):
            if j not in Z[k]:
                Z[j].discard(k)
    return state


def stage5(state: LearnState, ledger) -> LearnState:
    """Keep immoralities that survive in the skeleton and reconcile contradicting pairs.

    Triples ``(i, j, k)`` and ``(j, k, p)`` disagree on the direction of
    ``j - k``. The extra statement ``A(j, p; S_jp + k)`` decides: independence
    means ``(j, k, p)`` cannot be an immorality, otherwise ``(i, j, k)`` goes.
    The same check runs on the ``i`` end.
    """
    Z = state.Z
    kept = set()
    for a, y, b in state.immoralities:
        if y in Z[a] and y in Z[b] and b not in Z[a]:
            kept.add((min(a, b), y, max(a, b)))
    for i, j, k in sorted(kept):
        if (i, j, k) not in kept:
            continue
        for e in (k, i):
            if (i, j, k) not in kept:
                break
            for p in range(state.d):
                other = (min(j, p), e, max(j, p))
                if p in (i, j, k) or other not in kept:
                    continue
                sep = ledger.sepset(j, p)
                if sep is None or e in sep:
                    continue
                if ledger.determine(j, p, (*sep, e)) == INDEPENDENT:
                    kept.discard(other)
                else:
                    kept.discard((i, j, k))
                    break
    state.immoralities = kept
    return state


def stage6(state: LearnState) -> MixedGraph:
    """Assemble the graph: immorality arcs directed into the middle node, all other edges undirected."""
    directed: set[tuple[int, int]] = set()
    for i, y, k in sorted(state.immoralities):
        for a in (i, k):
            if (y, a) not in directed:
                directed.add((a, y))
    skel = {(a, b) for a in range(state.d) for b in state.Z[a] if a < b and a in state.Z[b]}
    undirected = skel - {(min(a, b), max(a, b)) for a, b in directed}
    return MixedGraph(state.d, directed, undirected)


def finish(g: MixedGraph, imm: frozenset[Triple]) -> tuple[MixedGraph, list, list]:
    """Closure, then repair when the result is not a valid essential graph for ``imm``."""
    skel = g.skeleton()
    closed, close_log = close(g, imm)
    if validate_essential(closed).ok and immoralities(closed) == imm:
        return closed, close_log, []
    fixed, repair_log = repair(closed, imm, skel)
    return fixed, close_log, repair_log


# --------------------------------------------------------------------------
# pipelines

def run_m3pc(ds: Dataset | None, config: LearnConfig | None = None, ledger=None, d: int | None = None) -> LearnResult:
    """Full pipeline: stages 1-6, closure and (if needed) repair."""
    config = config or LearnConfig()
    t0 = time.perf_counter()
    if ledger is None:
        ledger = config.make_ledger(ds)
    d = ds.d if d is None else d
    state = stage1(ledger, d)
    state.snap("stage1", ledger)
    stage2(state, ledger)
    state.snap("stage2", ledger)
    stage3(state, ledger, config.max_cond)
    state.snap("stage3", ledger)
    stage4(state)
    state.snap("stage4", ledger)
    stage5(state, ledger)
    state.snap("stage5", ledger)
    g = stage6(state)
    imm = frozenset(state.immoralities)
    final, close_log, repair_log = finish(g, imm)
    return LearnResult(final, imm, state, ledger, close_log, repair_log, time.perf_counter() - t0)


def mmpc_skeleton(ds: Dataset | None, config: LearnConfig | None = None, ledger=None, d: int | None = None):
    """Baseline skeleton: stage 1, symmetry prune, subset elimination, symmetry prune.

    Returns the undirected skeleton and the working state.
    """
    config = config or LearnConfig(consistency=False)
    if ledger is None:
        ledger = config.make_ledger(ds)
    d = ds.d if d is None else d
    state = stage1(ledger, d)
    state.snap("stage1", ledger)
    stage2(state, ledger, track=False)
    state.snap("stage2", ledger)
    stage3(state, ledger, config.max_cond, track=False)
    state.snap("stage3", ledger)
    stage4(state)
    state.snap("stage4", ledger)
    skel = {(a, b) for a in range(d) for b in state.Z[a] if a < b}
    return MixedGraph(d, (), skel), state, ledger


def decide_vees(skeleton: MixedGraph, ledger, max_cond: int) -> set[Triple]:
    """Decide each vee-structure by a fresh separating-set search.

    The first set (smallest, then lexicographic) drawn from the neighbours of
    the two ends that separates them settles the vee: it is an immorality when
    the middle node is outside that set and adding it makes the ends dependent.
    """
    found = set()
    for x, y, z in vee_structures(skeleton):
        cands = sorted((skeleton.neighbors(x) | skeleton.neighbors(z)) - {x, z})
        sep = None
        for size in range(min(max_cond, len(cands)) + 1):
            for S in combinations(cands, size):
                if ledger.determine(x, z, S) == INDEPENDENT:
                    sep = S
                    break
            if sep is not None:
                break
        if sep is None:
            stored = ledger.sepset(x, z)
            sep = tuple(stored) if stored is not None else None
        if sep is None or y in sep:
            continue
        if ledger.determine(x, z, (*sep, y)) != INDEPENDENT:
            found.add((x, y, z))
    return found


def run_mmpc(ds: Dataset | None, config: LearnConfig | None = None, ledger=None, d: int | None = None) -> LearnResult:
    """Baseline skeleton followed by vee-structure testing and closure."""
    config = config or LearnConfig(consistency=False)
    t0 = time.perf_counter()
    skel, state, ledger = mmpc_skeleton(ds, config, ledger, d)
    found = decide_vees(skel, ledger, config.max_cond)
    state.immoralities = set(found)
    state.snap("vees", ledger)
    # contradictory vees are reconciled exactly as in the full pipeline
    stage5(state, ledger)
    g = stage6(state)
    imm = frozenset(state.immoralities)
    final, close_log, repair_log = finish(g, imm)
    return LearnResult(final, imm, state, ledger, close_log, repair_log, time.perf_counter() - t0)

"""Propagating forced orientations and repairing graphs that no DAG represents faithfully.

Three local structures force an undirected edge ``w - y`` to become ``w -> y``:

1. ``z -> w - y`` with ``z`` and ``y`` non-adjacent (else a new immorality);
2. ``w -> z -> y`` with ``w - y`` (else a directed cycle);
3. ``z1 -> y <- z2`` with ``z1``, ``z2`` non-adjacent and ``w`` joined to
   ``z1``, ``z2`` and ``y`` by undirected edges.

Every action is recorded as a plain dict so that a run report can replay it.
"""
from __future__ import annotations

from itertools import combinations
from typing import Iterable

from .graph import (
    Edge,
    MixedGraph,
    Triple,
    find_directed_cycle,
    immoralities,
    topological_order,
    undirected_components,
    validate_essential,
)


class UnrecoverableConflict(RuntimeError):
    """A directed cycle made only of edges fixed by data immoralities."""

    def __init__(self, cycle: list[int]) -> None:
        super().__init__(f"directed cycle {cycle} consists only of edges fixed by immoralities")
        self.cycle = cycle


class _Work:
    """Mutable edge sets with adjacency lookups."""

    def __init__(self, g: MixedGraph) -> None:
        self.n = g.n
        self.pa = [set(g.parents(v)) for v in range(g.n)]
        self.ch = [set(g.children(v)) for v in range(g.n)]
        self.un = [set(g.undirected_neighbors(v)) for v in range(g.n)]

    def adjacent(self, a: int, b: int) -> bool:
        return b in self.pa[a] or b in self.ch[a] or b in self.un[a]

    def orient(self, a: int, b: int) -> None:
        self.un[a].discard(b)
        self.un[b].discard(a)
        self.pa[a].discard(b)
        self.ch[b].discard(a)
        self.ch[a].add(b)
        self.pa[b].add(a)

    def add_undirected(self, a: int, b: int) -> None:
        self.un[a].add(b)
        self.un[b].add(a)

    def directed(self) -> list[Edge]:
        return sorted((a, b) for a in range(self.n) for b in self.ch[a])

    def graph(self) -> MixedGraph:
        und = {(a, b) for a in range(self.n) for b in self.un[a] if a < b}
        return MixedGraph(self.n, self.directed(), und)

    def has_path(self, src: int, dst: int) -> bool:
        seen, todo = {src}, [src]
        while todo:
            v = todo.pop()
            if v == dst:
                return True
            for w in self.ch[v]:
                if w not in seen:
                    seen.add(w)
                    todo.append(w)
        return False


def _oriented(w: int, y: int, structure: int) -> dict:
    return {"action": "edge_oriented", "edge": [w, y], "structure": structure}


# --------------------------------------------------------------------------
# closure

def _structure3(work: _Work, imm: Iterable[Triple], log: list) -> bool:
    changed = False
    for i, y, k in sorted(imm):
        if i not in work.pa[y] or k not in work.pa[y] or work.adjacent(i, k):
            continue
        for w in sorted(work.un[i] & work.un[k] & work.un[y]):
            work.orient(w, y)
            log.append(_oriented(w, y, 3))
            changed = True
    return changed


def _structure1_pass(work: _Work, log: list) -> bool:
    changed = False
    for w in range(work.n):
        for y in sorted(work.un[w]):
            if y not in work.un[w]:
                continue
            if any(not work.adjacent(z, y) for z in work.pa[w]):
                work.orient(w, y)
                log.append(_oriented(w, y, 1))
                changed = True
    return changed


def _structure2_pass(work: _Work, log: list) -> bool:
    changed = False
    for w in range(work.n):
        for y in sorted(work.un[w]):
            if y not in work.un[w]:
                continue
            if work.ch[w] & work.pa[y]:
                work.orient(w, y)
                log.append(_oriented(w, y, 2))
                changed = True
    return changed


def close_structure3(g: MixedGraph, imm: Iterable[Triple]) -> tuple[MixedGraph, list]:
    """Orient ``w -> y`` for each immorality ``(i, y, k)`` and common undirected neighbour ``w``."""
    work, log = _Work(g), []
    _structure3(work, imm, log)
    return work.graph(), log


def close_structure1(g: MixedGraph) -> tuple[MixedGraph, list]:
    """Apply structure 1 until nothing changes."""
    work, log = _Work(g), []
    while _structure1_pass(work, log):
        pass
    return work.graph(), log


def close_structure2(g: MixedGraph) -> tuple[MixedGraph, list]:
    """Apply structure 2 until nothing changes."""
    work, log = _Work(g), []
    while _structure2_pass(work, log):
        pass
    return work.graph(), log


def _close(work: _Work, imm: Iterable[Triple], log: list) -> bool:
    changed = _structure3(work, imm, log)
    while True:
        step = False
        while _structure1_pass(work, log) | _structure2_pass(work, log):
            step = True
        # structure 3 again over whatever immoralities now exist; a no-op when faithful
        step |= _structure3(work, immoralities(work.graph()), log)
        changed |= step
        if not step:
            return changed


def close(g: MixedGraph, imm: Iterable[Triple]) -> tuple[MixedGraph, list]:
    """Structure 3 over ``imm``, then structures 1 and 2 to a joint fixpoint.

    Returns the closed graph and the list of orientations made.
    """
    work, log = _Work(g), []
    _close(work, imm, log)
    return work.graph(), log


def new_immoralities(g: MixedGraph, imm: Iterable[Triple]) -> list[Triple]:
    return sorted(immoralities(g) - set(imm))


# --------------------------------------------------------------------------
# repair

def _min_degree_fill(nodes: list[int], nbrs: dict[int, set[int]]) -> list[Edge]:
    """Fill-in edges from minimum-degree elimination (ties to smallest index)."""
    adj = {v: set(nbrs[v]) & set(nodes) for v in nodes}
    left = set(nodes)
    fill = []
    while left:
        v = min(left, key=lambda u: (len(adj[u] & left), u))
        around = sorted(adj[v] & left)
        for a, b in combinations(around, 2):
            if b not in adj[a]:
                adj[a].add(b)
                adj[b].add(a)
                fill.append((a, b))
        left.discard(v)
    return fill


def repair(
    g: MixedGraph,
    imm: Iterable[Triple],
    skeleton_edges: Iterable[Edge] | None = None,
) -> tuple[MixedGraph, list]:
    """Turn a closed graph into a valid essential graph without deleting any edge.

    Steps (a) to (d) break directed cycles, patch unsupported immoralities,
    re-close and triangulate the undirected part. If the result is still not
    a valid essential graph, step (e) replaces it by the essential graph of a
    consistent extension (same skeleton, same directed edges as a starting
    point).

    Parameters
    ----------
    g : MixedGraph
        Graph after closure, possibly with directed cycles, immoralities not
        supported by data, or unprotected undirected structure.
    imm : iterable of triples
        Immoralities established from data. Their edges are never reversed.
    skeleton_edges : iterable of edges, optional
        Skeleton before repair; defaults to the skeleton of ``g``.

    Returns
    -------
    graph, log
        The repaired graph and the ordered list of actions.

    Raises
    ------
    UnrecoverableConflict
        If the immorality edges on their own contain a directed cycle.
    """
    imm = frozenset(imm)
    skel = {tuple(sorted(e)) for e in (g.skeleton() if skeleton_edges is None else skeleton_edges)}
    fixed = {(i, y) for i, y, _ in imm} | {(k, y) for _, y, k in imm}
    order = topological_order(g, fixed)
    if order is None:
        raise UnrecoverableConflict(find_directed_cycle(g, fixed))
    rank = {v: r for r, v in enumerate(order)}
    work, log = _Work(g), []

    def forward(a: int, b: int) -> Edge:
        return (a, b) if rank[a] < rank[b] else (b, a)

    while True:
        outer_change = False
        while True:
            change = False
            # (a) break directed cycles
            while True:
                cyc = find_directed_cycle(MixedGraph(work.n, work.directed()))
                if cyc is None:
                    break
                cands = sorted((a, b) for a, b in zip(cyc, cyc[1:]) if (a, b) not in fixed and rank[a] > rank[b])
                if not cands:
                    raise UnrecoverableConflict(cyc)
                a, b = cands[0]
                work.orient(b, a)
                log.append({"action": "cycle_broken", "edge": [a, b], "new_dir": [b, a]})
                change = True
                for c in sorted(work.pa[a] - {b}):
                    if not work.adjacent(b, c):
                        x, z = forward(b, c)
                        work.orient(x, z)
                        log.append({"action": "immorality_patched", "triple": [min(b, c), a, max(b, c)], "added_edge": [x, z]})
            # (b) immoralities not backed by data on original skeleton edges
            for x, y, z in sorted(immoralities(work.graph()) - imm):
                if not ((min(x, y), max(x, y)) in skel and (min(y, z), max(y, z)) in skel):
                    continue
                if work.adjacent(x, z) or x not in work.pa[y] or z not in work.pa[y]:
                    continue
                ok_xz = not work.has_path(z, x)
                ok_zx = not work.has_path(x, z)
                if ok_xz and ok_zx:
                    src, dst = (x, z) if x < z else (z, x)
                elif ok_xz:
                    src, dst = x, z
                elif ok_zx:
                    src, dst = z, x
                else:
                    continue
                work.orient(src, dst)
                log.append({"action": "immorality_patched", "triple": [x, y, z], "added_edge": [src, dst]})
                change = True
            # (c) closure over the immoralities now present
            change |= _close(work, immoralities(work.graph()), log)
            outer_change |= change
            if not change:
                break
        # (d) triangulate the undirected part
        cur = work.graph()
        for comp in undirected_components(cur):
            if len(comp) < 4:
                continue
            for a, b in _min_degree_fill(comp, {v: set(work.un[v]) for v in comp}):
                if work.adjacent(a, b):
                    continue
                work.add_undirected(a, b)
                log.append({"action": "fill_in_added", "edge": [a, b]})
                outer_change = True
                for w, y in ((a, b), (b, a)):
                    cands = sorted(work.pa[y] & work.un[w])
                    for z1, z2 in combinations(cands, 2):
                        if not work.adjacent(z1, z2):
                            work.add_undirected(z1, z2)
                            log.append({"action": "fill_in_added", "edge": [z1, z2]})
        if not outer_change:
            break
    result = work.graph()
    if not validate_essential(result).ok:
        # (e) a patch edge can end up as a directed chord of an undirected
        # cycle, which no fill-in can repair; fall back to the essential graph
        # of a DAG that orients the undirected edges along the directed part
        result = _extension_fallback(result)
        log.append({"action": "extension_fallback", "graph": result.to_dict()})
    report = validate_essential(result)
    if not report.ok:
        raise RuntimeError(f"repair left an invalid graph: {', '.join(report.failed())}")
    return result, log


def _extension_fallback(g: MixedGraph) -> MixedGraph:
    from .graph import essential_graph_of

    rank = {v: r for r, v in enumerate(topological_order(g))}
    oriented = [(a, b) if rank[a] < rank[b] else (b, a) for a, b in g.undirected]
    return essential_graph_of(MixedGraph(g.n, [*g.directed, *oriented]))


def replay(g: MixedGraph, log: Iterable[dict]) -> MixedGraph:
    """Re-apply a logged action list to ``g``."""
    work = _Work(g)
    for act in log:
        kind = act["action"]
        if kind == "edge_oriented":
            work.orient(*act["edge"])
        elif kind == "cycle_broken":
            work.orient(*act["new_dir"])
        elif kind == "immorality_patched":
            work.orient(*act["added_edge"])
        elif kind == "fill_in_added":
            work.add_undirected(*act["edge"])
        elif kind == "extension_fallback":
            work = _Work(MixedGraph.from_dict(act["graph"]))
        else:
            raise ValueError(f"unknown action {kind!r}")
    return work.graph()

"""Mixed graphs (directed plus undirected edges) and the DAG machinery around them.

A DAG is a :class:`MixedGraph` without undirected edges and without a
directed cycle; an essential graph keeps an edge directed exactly when every
Markov-equivalent DAG orients it the same way.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from itertools import combinations, permutations
from typing import Iterable, Sequence

Edge = tuple[int, int]
Triple = tuple[int, int, int]


class CyclicGraphError(ValueError):
    pass


class InvalidEssentialGraph(ValueError):
    pass


def _uedge(a: int, b: int) -> Edge:
    return (a, b) if a < b else (b, a)


class MixedGraph:
    """Immutable graph on nodes ``0..n-1`` with directed and undirected edges."""

    __slots__ = ("n", "directed", "undirected", "_adj", "_pa", "_ch", "_un")

    def __init__(self, n: int, directed: Iterable[Edge] = (), undirected: Iterable[Edge] = ()) -> None:
        self.n = int(n)
        self.directed = frozenset((int(a), int(b)) for a, b in directed)
        self.undirected = frozenset(_uedge(int(a), int(b)) for a, b in undirected)
        pa = [set() for _ in range(self.n)]
        ch = [set() for _ in range(self.n)]
        un = [set() for _ in range(self.n)]
        seen: set[Edge] = set()
        for a, b in self.directed:
            self._check_pair(a, b, seen)
            ch[a].add(b)
            pa[b].add(a)
        for a, b in self.undirected:
            self._check_pair(a, b, seen)
            un[a].add(b)
            un[b].add(a)
        self._pa = [frozenset(s) for s in pa]
        self._ch = [frozenset(s) for s in ch]
        self._un = [frozenset(s) for s in un]
        self._adj = [self._pa[v] | self._ch[v] | self._un[v] for v in range(self.n)]

    def _check_pair(self, a: int, b: int, seen: set[Edge]) -> None:
        if a == b:
            raise ValueError(f"self-loop at node {a}")
        if not (0 <= a < self.n and 0 <= b < self.n):
            raise ValueError(f"edge ({a}, {b}) outside node range 0..{self.n - 1}")
        e = _uedge(a, b)
        if e in seen:
            raise ValueError(f"more than one edge between {a} and {b}")
        seen.add(e)

    # -- queries ----------------------------------------------------------
    def parents(self, v: int) -> frozenset[int]:
        return self._pa[v]

    def children(self, v: int) -> frozenset[int]:
        return self._ch[v]

    def undirected_neighbors(self, v: int) -> frozenset[int]:
        return self._un[v]

    def neighbors(self, v: int) -> frozenset[int]:
        return self._adj[v]

    def adjacent(self, a: int, b: int) -> bool:
        return b in self._adj[a]

    def skeleton(self) -> frozenset[Edge]:
        return frozenset(_uedge(a, b) for a, b in self.directed) | self.undirected

    def is_dag(self) -> bool:
        return not self.undirected and find_directed_cycle(self) is None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MixedGraph):
            return NotImplemented
        return (self.n, self.directed, self.undirected) == (other.n, other.directed, other.undirected)

    def __hash__(self) -> int:
        return hash((self.n, self.directed, self.undirected))

    def __repr__(self) -> str:
        return f"MixedGraph(n={self.n}, directed={sorted(self.directed)}, undirected={sorted(self.undirected)})"

    # -- serialization ----------------------------------------------------
    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        names = list(names) if names is not None else [str(v) for v in range(self.n)]
        return {
            "nodes": names,
            "directed": [[names[a], names[b]] for a, b in sorted(self.directed)],
            "undirected": [[names[a], names[b]] for a, b in sorted(self.undirected)],
        }

    def to_json(self, names: Sequence[str] | None = None) -> str:
        return json.dumps(self.to_dict(names), indent=2) + "\n"

    def to_dot(self, names: Sequence[str] | None = None, title: str = "G") -> str:
        names = list(names) if names is not None else [str(v) for v in range(self.n)]
        q = lambda v: json.dumps(names[v])  # noqa: E731
        lines = [f"digraph {title} {{"]
        lines += [f"  {q(v)};" for v in range(self.n)]
        lines += [f"  {q(a)} -> {q(b)};" for a, b in sorted(self.directed)]
        # undirected edges use the undirected connector even inside a digraph block
        lines += [f"  {q(a)} -- {q(b)};" for a, b in sorted(self.undirected)]
        lines.append("}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "MixedGraph":
        names = list(doc["nodes"])
        idx = {name: k for k, name in enumerate(names)}
        return cls(
            len(names),
            [(idx[a], idx[b]) for a, b in doc.get("directed", [])],
            [(idx[a], idx[b]) for a, b in doc.get("undirected", [])],
        )


def dag(n: int, edges: Iterable[Edge]) -> MixedGraph:
    """Build a DAG, rejecting directed cycles."""
    g = MixedGraph(n, edges)
    cyc = find_directed_cycle(g)
    if cyc is not None:
        raise CyclicGraphError(f"directed cycle {cyc}")
    return g


# --------------------------------------------------------------------------
# acyclicity

def topological_order(g: MixedGraph, edges: Iterable[Edge] | None = None) -> list[int] | None:
    """Kahn's algorithm with smallest-index tie-break; None if the edges contain a cycle."""
    edges = g.directed if edges is None else edges
    indeg = [0] * g.n
    out = [[] for _ in range(g.n)]
    for a, b in edges:
        out[a].append(b)
        indeg[b] += 1
    ready = [v for v in range(g.n) if indeg[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for w in out[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, w)
    return order if len(order) == g.n else None


def find_directed_cycle(g: MixedGraph, edges: Iterable[Edge] | None = None) -> list[int] | None:
    """Return the nodes of one directed cycle (first node repeated at the end), or None."""
    edges = g.directed if edges is None else edges
    out = [[] for _ in range(g.n)]
    for a, b in sorted(edges):
        out[a].append(b)
    colour = [0] * g.n
    parent = [-1] * g.n
    for root in range(g.n):
        if colour[root]:
            continue
        stack = [(root, iter(out[root]))]
        colour[root] = 1
        while stack:
            v, it = stack[-1]
            w = next(it, None)
            if w is None:
                colour[v] = 2
                stack.pop()
                continue
            if colour[w] == 0:
                colour[w] = 1
                parent[w] = v
                stack.append((w, iter(out[w])))
            elif colour[w] == 1:
                cyc = [v]
                while cyc[-1] != w:
                    cyc.append(parent[cyc[-1]])
                cyc.reverse()
                return cyc + [cyc[0]]
    return None


def _require_dag(g: MixedGraph) -> None:
    if g.undirected:
        raise ValueError("expected a DAG, found undirected edges")
    cyc = find_directed_cycle(g)
    if cyc is not None:
        raise CyclicGraphError(f"directed cycle {cyc}")


def ancestors(g: MixedGraph, nodes: Iterable[int]) -> set[int]:
    """The given nodes together with all their directed ancestors."""
    seen = set(nodes)
    todo = list(seen)
    while todo:
        v = todo.pop()
        for p in g.parents(v):
            if p not in seen:
                seen.add(p)
                todo.append(p)
    return seen


# --------------------------------------------------------------------------
# d-separation

def d_separated(g: MixedGraph, x: int, y: int, S: Iterable[int] = ()) -> bool:
    """True when every trail between ``x`` and ``y`` is blocked by ``S``.

    Linear-time reachability over (node, direction) states: a trail stays
    active through a non-collider outside ``S`` and through a collider that
    is in ``S`` or has a descendant in ``S``.
    """
    _require_dag(g)
    S = set(S)
    if x == y:
        raise ValueError("x and y must differ")
    if x in S or y in S:
        raise ValueError("x and y must lie outside the conditioning set")
    anc = ancestors(g, S)
    UP, DOWN = 0, 1  # arrived from a child / from a parent
    seen = set()
    todo = [(x, UP)]
    while todo:
        v, how = todo.pop()
        if (v, how) in seen:
            continue
        seen.add((v, how))
        if v == y:
            return False
        if how == UP:
            if v in S:
                continue
            todo.extend((p, UP) for p in g.parents(v))
            todo.extend((c, DOWN) for c in g.children(v))
        else:
            if v not in S:
                todo.extend((c, DOWN) for c in g.children(v))
            if v in anc:
                todo.extend((p, UP) for p in g.parents(v))
    return True


def markov_blanket(g: MixedGraph, x: int) -> set[int]:
    """Parents, children and the children's other parents."""
    _require_dag(g)
    mb = set(g.parents(x)) | set(g.children(x))
    for c in g.children(x):
        mb |= g.parents(c)
    mb.discard(x)
    return mb


# --------------------------------------------------------------------------
# vee-structures, immoralities, equivalence

def vee_structures(g: MixedGraph) -> list[Triple]:
    """All skeleton paths ``i - y - k`` with ``i < k`` and ``i``, ``k`` non-adjacent."""
    out = []
    for y in range(g.n):
        for i, k in combinations(sorted(g.neighbors(y)), 2):
            if not g.adjacent(i, k):
                out.append((i, y, k))
    return sorted(out)


def immoralities(g: MixedGraph) -> frozenset[Triple]:
    """Triples ``i -> y <- k`` (``i < k``) with ``i`` and ``k`` non-adjacent."""
    out = set()
    for y in range(g.n):
        for i, k in combinations(sorted(g.parents(y)), 2):
            if not g.adjacent(i, k):
                out.add((i, y, k))
    return frozenset(out)


def markov_equivalent(g1: MixedGraph, g2: MixedGraph) -> bool:
    """Same skeleton and same immoralities."""
    _require_dag(g1)
    _require_dag(g2)
    return g1.n == g2.n and g1.skeleton() == g2.skeleton() and immoralities(g1) == immoralities(g2)


def essential_graph_of(g: MixedGraph) -> MixedGraph:
    """Essential graph by closure: keep immoralities, undirect the rest, propagate."""
    from .orient import close

    _require_dag(g)
    imm = immoralities(g)
    directed = {(i, y) for i, y, _ in imm} | {(k, y) for _, y, k in imm}
    undirected = g.skeleton() - {_uedge(a, b) for a, b in directed}
    result, _ = close(MixedGraph(g.n, directed, undirected), imm)
    return result


def essential_graph_by_enumeration(g: MixedGraph) -> MixedGraph:
    """Essential graph by brute force over all node orderings (small graphs only).

    Every acyclic orientation of the skeleton is induced by some ordering;
    those with the same immoralities as ``g`` form its equivalence class.
    """
    _require_dag(g)
    if g.n > 8:
        raise ValueError("enumeration is limited to 8 nodes")
    skel = sorted(g.skeleton())
    target = immoralities(g)
    members = set()
    for order in permutations(range(g.n)):
        rank = {v: r for r, v in enumerate(order)}
        orient = frozenset((a, b) if rank[a] < rank[b] else (b, a) for a, b in skel)
        if orient in members:
            continue
        if immoralities(MixedGraph(g.n, orient)) == target:
            members.add(orient)
    common = frozenset.intersection(*members)
    undirected = [e for e in skel if e not in common and e[::-1] not in common]
    return MixedGraph(g.n, common, undirected)


# --------------------------------------------------------------------------
# validity of an essential graph

def undirected_components(g: MixedGraph) -> list[list[int]]:
    seen = [False] * g.n
    comps = []
    for s in range(g.n):
        if seen[s]:
            continue
        comp, todo = [], [s]
        seen[s] = True
        while todo:
            v = todo.pop()
            comp.append(v)
            for w in g.undirected_neighbors(v):
                if not seen[w]:
                    seen[w] = True
                    todo.append(w)
        comps.append(sorted(comp))
    return comps


def _mcs_order(nodes: Sequence[int], nbrs) -> list[int]:
    """Maximum-cardinality search; returns nodes in visiting order (ties to smallest index)."""
    weight = {v: 0 for v in nodes}
    order = []
    left = set(nodes)
    while left:
        v = min(left, key=lambda u: (-weight[u], u))
        order.append(v)
        left.discard(v)
        for w in nbrs(v):
            if w in left:
                weight[w] += 1
    return order


def is_chordal(nodes: Sequence[int], nbrs) -> bool:
    """Chordality test: the reverse MCS order must be a perfect elimination order."""
    order = _mcs_order(nodes, nbrs)
    pos = {v: k for k, v in enumerate(order)}
    for v in order:
        earlier = [w for w in nbrs(v) if w in pos and pos[w] < pos[v]]
        if not earlier:
            continue
        last = max(earlier, key=lambda w: pos[w])
        need = set(earlier) - {last}
        if not need <= set(nbrs(last)):
            return False
    return True


def protected_slots(g: MixedGraph) -> list[tuple[int, Edge]]:
    """Undirected edges ``w - y`` whose orientation one of the three closure structures forces.

    Returns ``(structure_id, (w, y))`` pairs, meaning ``w -> y`` is forced.
    """
    out = []
    for w, y in sorted(g.undirected):
        for a, b in ((w, y), (y, w)):
            # 1: z -> a - b with z, b non-adjacent
            if any(not g.adjacent(z, b) for z in g.parents(a)):
                out.append((1, (a, b)))
            # 2: a -> z -> b
            if g.children(a) & g.parents(b):
                out.append((2, (a, b)))
            # 3: z1 -> b <- z2 with z1, z2 non-adjacent, a - z1 and a - z2 undirected
            cands = sorted(g.parents(b) & g.undirected_neighbors(a))
            if any(not g.adjacent(z1, z2) for z1, z2 in combinations(cands, 2)):
                out.append((3, (a, b)))
    return out


@dataclass(frozen=True)
class ValidityReport:
    acyclic_directed_part: bool
    closure_complete: bool
    components_triangulated: bool

    @property
    def ok(self) -> bool:
        return self.acyclic_directed_part and self.closure_complete and self.components_triangulated

    def failed(self) -> list[str]:
        return [name for name in ("acyclic_directed_part", "closure_complete", "components_triangulated")
                if not getattr(self, name)]


def validate_essential(g: MixedGraph) -> ValidityReport:
    """Check the three conditions that make a mixed graph an essential graph.

    1. the directed edges form no cycle;
    2. no undirected edge sits in a position where a closure structure forces it;
    3. each connected component of the undirected part is chordal.
    """
    acyclic = find_directed_cycle(g) is None
    closed = not protected_slots(g)
    chordal = all(is_chordal(comp, g.undirected_neighbors) for comp in undirected_components(g))
    return ValidityReport(acyclic, closed, chordal)


def consistent_extension(g: MixedGraph) -> MixedGraph:
    """Orient every undirected edge so the result is a DAG with no new immoralities.

    Repeatedly removes a sink of the directed part whose undirected
    neighbours are adjacent to all of its other neighbours, pointing its
    undirected edges into it. The highest-indexed eligible node goes first,
    so a lone edge ``a - b`` with ``a < b`` becomes ``a -> b``.
    """
    report = validate_essential(g)
    if not report.ok:
        raise InvalidEssentialGraph(f"not a valid essential graph: {', '.join(report.failed())} failed")
    alive = set(range(g.n))
    pa = {v: set(g.parents(v)) for v in alive}
    ch = {v: set(g.children(v)) for v in alive}
    un = {v: set(g.undirected_neighbors(v)) for v in alive}
    directed = set(g.directed)
    while alive:
        chosen = None
        for x in sorted(alive, reverse=True):
            if ch[x]:
                continue
            adj_x = pa[x] | un[x]
            if all((adj_x - {y}) <= (pa[y] | ch[y] | un[y]) for y in un[x]):
                chosen = x
                break
        if chosen is None:
            raise InvalidEssentialGraph("no consistent extension exists")
        x = chosen
        for y in un[x]:
            directed.add((y, x))
            un[y].discard(x)
        for p in pa[x]:
            ch[p].discard(x)
        alive.discard(x)
        del pa[x], ch[x], un[x]
    result = MixedGraph(g.n, directed)
    if find_directed_cycle(result) is not None or immoralities(result) != immoralities(g):
        raise InvalidEssentialGraph("extension broke acyclicity or immoralities")
    return result

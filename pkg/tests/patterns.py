"""Hand-built unfaithful inputs for the closure and repair passes."""
from __future__ import annotations

import numpy as np

from essograph.graph import MixedGraph

# X->Y-Z<-W, each arrowhead backed by an immorality with an extra parent
# (P->Y<-X and Q->Z<-W); closing either end creates a new immorality
FIG2 = (
    6,
    [(0, 1), (4, 1), (3, 2), (5, 2)],
    [(1, 2)],
    {(0, 1, 4), (3, 2, 5)},
)
# A->C<-B, C-F, A-D, E->D<-F: structure 1 closes the cycle D->A->C->F->D
FIG3_LEFT = (
    6,
    [(0, 2), (1, 2), (4, 3), (5, 3)],
    [(2, 5), (0, 3)],
    {(0, 2, 1), (4, 3, 5)},
)
# B->C<-A, C-D, A-D, E->D: structure 1 gives C->D and D->A, closing A->C->D->A
FIG3_RIGHT = (
    5,
    [(1, 2), (0, 2), (4, 3)],
    [(2, 3), (0, 3)],
    {(0, 2, 1)},
)
PATTERNS = {"fig2": FIG2, "fig3_left": FIG3_LEFT, "fig3_right": FIG3_RIGHT}


def relabel(pattern, perm):
    n, directed, undirected, imm = pattern
    p = list(perm)
    d = [(p[a], p[b]) for a, b in directed]
    u = [(p[a], p[b]) for a, b in undirected]
    tri = {(min(p[i], p[k]), p[y], max(p[i], p[k])) for i, y, k in imm}
    return MixedGraph(n, d, u), frozenset(tri)


def adversarial_fixtures(count_per_pattern: int = 20, seed: int = 0):
    rng = np.random.default_rng(seed)
    out = []
    for name, pattern in PATTERNS.items():
        n = pattern[0]
        for k in range(count_per_pattern):
            perm = range(n) if k == 0 else rng.permutation(n)
            g, imm = relabel(pattern, perm)
            out.append((f"{name}-{k}", g, imm))
    return out

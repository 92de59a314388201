"""Independent reference implementations used as test oracles.

None of these import the code under test beyond the graph container.
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
from collections import Counter

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from neuso.graph import LabeledGraph, from_edges


def brute_force_matches(g: LabeledGraph, q: LabeledGraph, allowed=None) -> int:
    """Count injective label- and edge-preserving maps by exhaustive search
    over label-compatible domains."""
    n = q.vertex_count
    doms = []
    for u in range(n):
        dom = [v for v in range(g.vertex_count) if g.labels[v] == q.labels[u]]
        if allowed is not None:
            dom = [v for v in dom if v in allowed[u]]
        doms.append(dom)
    edges = q.edges()
    adj = [set(a) for a in g.adjacency]
    count = 0
    for combo in itertools.product(*doms):
        if len(set(combo)) != n:
            continue
        if all(combo[b] in adj[combo[a]] for a, b in edges):
            count += 1
    return count


def brute_force_images(g: LabeledGraph, q: LabeledGraph) -> list[set[int]]:
    """Per query vertex, the data vertices it is mapped to by some match."""
    n = q.vertex_count
    doms = [[v for v in range(g.vertex_count) if g.labels[v] == q.labels[u]] for u in range(n)]
    adj = [set(a) for a in g.adjacency]
    out = [set() for _ in range(n)]
    for combo in itertools.product(*doms):
        if len(set(combo)) == n and all(combo[b] in adj[combo[a]] for a, b in q.edges()):
            for u, v in enumerate(combo):
                out[u].add(v)
    return out


def union_find_connected(q: LabeledGraph, vertices) -> bool:
    vs = list(vertices)
    if not vs:
        return True
    parent = {v: v for v in vs}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in q.edges():
        if a in parent and b in parent:
            parent[find(a)] = find(b)
    return len({find(v) for v in vs}) == 1


def dijkstra(n_states, edges, source=0) -> dict:
    """Shortest distances over ``edges`` = {(a, b): w}."""
    out_adj: dict = {}
    for (a, b), w in edges.items():
        out_adj.setdefault(a, []).append((b, w))
    dist = {source: 0}
    heap = [(0, source)]
    while heap:
        d, s = heapq.heappop(heap)
        if d > dist.get(s, math.inf):
            continue
        for t, w in out_adj.get(s, []):
            if d + w < dist.get(t, math.inf):
                dist[t] = d + w
                heapq.heappush(heap, (d + w, t))
    return dist


def color_refinement(graphs: list[LabeledGraph], rounds: int | None = None) -> list[Counter]:
    """Joint 1-WL refinement; returns each graph's final color histogram."""
    colors = [list(g.labels) for g in graphs]
    rounds = rounds or sum(g.vertex_count for g in graphs)
    for _ in range(rounds):
        sigs = [[(c[v], tuple(sorted(c[w] for w in g.adjacency[v]))) for v in range(g.vertex_count)]
                for g, c in zip(graphs, colors)]
        palette = {s: i for i, s in enumerate(sorted({s for sig in sigs for s in sig}))}
        new = [[palette[s] for s in sig] for sig in sigs]
        if all(len(set(a)) == len(set(b)) for a, b in zip(new, colors)):
            colors = new
            break
        colors = new
    return [Counter(c) for c in colors]


def wl_equivalent(g1: LabeledGraph, g2: LabeledGraph) -> bool:
    h1, h2 = color_refinement([g1, g2])
    return h1 == h2


def multiset_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Bottleneck distance between two row multisets: the minimum over
    bijections of the largest L-infinity difference between paired rows."""
    if a.shape != b.shape:
        return math.inf
    cost = np.abs(a[:, None, :] - b[None, :, :]).max(axis=2)
    levels = np.unique(cost)
    lo, hi = 0, len(levels) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        match = maximum_bipartite_matching(csr_matrix(cost <= levels[mid]), perm_type="column")
        if (match >= 0).all():
            hi = mid
        else:
            lo = mid + 1
    return float(levels[lo])


def random_connected_query(rng: random.Random, n: int, p: float, labels: int) -> LabeledGraph:
    while True:
        h = nx.gnp_random_graph(n, p, seed=rng.randrange(2**31))
        if nx.is_connected(h):
            return from_edges([rng.randrange(labels) for _ in range(n)], h.edges(), labels)


def random_graph(rng: random.Random, n: int, p: float, labels: int) -> LabeledGraph:
    h = nx.gnp_random_graph(n, p, seed=rng.randrange(2**31))
    return from_edges([rng.randrange(labels) for _ in range(n)], h.edges(), labels)


def cycle(n: int, labels=None) -> LabeledGraph:
    return from_edges(labels or [0] * n, [(i, (i + 1) % n) for i in range(n)], 1 if not labels else None)


def disjoint_cycles(k: int, length: int) -> LabeledGraph:
    edges = []
    for c in range(k):
        base = c * length
        edges += [(base + i, base + (i + 1) % length) for i in range(length)]
    return from_edges([0] * (k * length), edges, 1)


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g

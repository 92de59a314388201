"""Vertex-labeled undirected graphs, the text format they travel in, and
bitmask helpers for query-vertex sets."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_QUERY_VERTICES = 64


class GraphFormatError(ValueError):
    """Raised when a graph file cannot be parsed; carries the line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    labels: tuple[int, ...]
    adjacency: tuple[tuple[int, ...], ...]
    label_alphabet_size: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def vertex_count(self) -> int:
        return len(self.labels)

    @property
    def edge_count(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def has_edge(self, u: int, v: int) -> bool:
        adj = self.adjacency[u]
        i = _bisect(adj, v)
        return i < len(adj) and adj[i] == v

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as (u, v) with u < v, in ascending order."""
        return [(u, v) for u, adj in enumerate(self.adjacency) for v in adj if u < v]

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(offsets, neighbors) int64 arrays; cached on first use."""
        if "csr" not in self._cache:
            degs = np.fromiter((len(a) for a in self.adjacency), dtype=np.int64,
                               count=self.vertex_count)
            offsets = np.zeros(self.vertex_count + 1, dtype=np.int64)
            np.cumsum(degs, out=offsets[1:])
            nbrs = np.fromiter((v for a in self.adjacency for v in a), dtype=np.int64,
                               count=int(offsets[-1]))
            self._cache["csr"] = (offsets, nbrs)
        return self._cache["csr"]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledGraph):
            return NotImplemented
        return (self.labels == other.labels and self.adjacency == other.adjacency
                and self.label_alphabet_size == other.label_alphabet_size)

    def __hash__(self) -> int:
        return hash((self.labels, self.adjacency, self.label_alphabet_size))

    def induced(self, vertices: Sequence[int]) -> LabeledGraph:
        """Induced subgraph, vertex i of the result is vertices[i]."""
        pos = {v: i for i, v in enumerate(vertices)}
        adj = []
        for v in vertices:
            adj.append(tuple(sorted(pos[w] for w in self.adjacency[v] if w in pos)))
        return LabeledGraph(tuple(self.labels[v] for v in vertices), tuple(adj),
                            self.label_alphabet_size)


def _bisect(seq: Sequence[int], x: int) -> int:
    lo, hi = 0, len(seq)
    while lo < hi:
        mid = (lo + hi) // 2
        if seq[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def from_edges(labels: Sequence[int], edges: Iterable[tuple[int, int]],
               label_alphabet_size: int | None = None) -> LabeledGraph:
    """Build a graph from a label list and an undirected edge list.

    Raises ValueError on self-loops, duplicate edges, or out-of-range ids.
    """
    n = len(labels)
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for u, v in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise ValueError(f"edge ({u}, {v}) out of range for {n} vertices")
        if u == v:
            raise ValueError(f"self-loop on vertex {u}")
        if v in nbrs[u]:
            raise ValueError(f"duplicate edge ({u}, {v})")
        nbrs[u].add(v)
        nbrs[v].add(u)
    labels = tuple(int(x) for x in labels)
    if any(x < 0 for x in labels):
        raise ValueError("negative label")
    sigma = label_alphabet_size if label_alphabet_size is not None else max(labels, default=0) + 1
    if labels and max(labels) >= sigma:
        raise ValueError("label outside alphabet")
    return LabeledGraph(labels, tuple(tuple(sorted(s)) for s in nbrs), max(sigma, 1))


def load_graph(text: str | bytes, label_alphabet_size: int | None = None) -> LabeledGraph:
    """Parse the ``t/v/e`` line format.

    The header ``t <|V|> <|E|>`` comes first, then one ``v <id> <label> <degree>``
    line per vertex (ids dense and in order), then ``e <u> <v>`` once per edge.
    """
    if isinstance(text, bytes):
        text = text.decode("ascii")
    header: tuple[int, int] | None = None
    labels: list[int] = []
    declared_deg: list[int] = []
    nbrs: list[set[int]] = []
    edge_seen = 0
    last_line = 0
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line:
            continue
        last_line = lineno
        parts = line.split()
        tag = parts[0]
        try:
            nums = [int(p) for p in parts[1:]]
        except ValueError:
            raise GraphFormatError(lineno, f"non-integer field in {line!r}") from None
        if tag == "t":
            if header is not None:
                raise GraphFormatError(lineno, "duplicate header")
            if len(nums) != 2 or min(nums) < 0:
                raise GraphFormatError(lineno, "header must be 't <|V|> <|E|>'")
            header = (nums[0], nums[1])
            nbrs = [set() for _ in range(nums[0])]
        elif header is None:
            raise GraphFormatError(lineno, "record before 't' header")
        elif tag == "v":
            if len(nums) != 3:
                raise GraphFormatError(lineno, "vertex line must be 'v <id> <label> <degree>'")
            vid, lab, deg = nums
            if vid != len(labels):
                raise GraphFormatError(lineno, f"vertex id {vid} not dense (expected {len(labels)})")
            if vid >= header[0]:
                raise GraphFormatError(lineno, f"vertex id {vid} out of range")
            if lab < 0 or deg < 0:
                raise GraphFormatError(lineno, "negative label or degree")
            if label_alphabet_size is not None and lab >= label_alphabet_size:
                raise GraphFormatError(lineno, f"label {lab} outside alphabet")
            labels.append(lab)
            declared_deg.append(deg)
        elif tag == "e":
            if len(nums) != 2:
                raise GraphFormatError(lineno, "edge line must be 'e <u> <v>'")
            u, v = nums
            if not (0 <= u < header[0] and 0 <= v < header[0]):
                raise GraphFormatError(lineno, f"edge ({u}, {v}) out of range")
            if u == v:
                raise GraphFormatError(lineno, f"self-loop on vertex {u}")
            if v in nbrs[u]:
                raise GraphFormatError(lineno, f"duplicate edge ({u}, {v})")
            nbrs[u].add(v)
            nbrs[v].add(u)
            edge_seen += 1
        else:
            raise GraphFormatError(lineno, f"unknown record type {tag!r}")
    if header is None:
        raise GraphFormatError(max(last_line, 1), "missing 't' header")
    if len(labels) != header[0]:
        raise GraphFormatError(last_line, f"declared {header[0]} vertices, found {len(labels)}")
    if edge_seen != header[1]:
        raise GraphFormatError(last_line, f"declared {header[1]} edges, found {edge_seen}")
    for v, deg in enumerate(declared_deg):
        if deg != len(nbrs[v]):
            raise GraphFormatError(last_line, f"vertex {v} declares degree {deg}, has {len(nbrs[v])}")
    sigma = label_alphabet_size if label_alphabet_size is not None else max(labels, default=0) + 1
    return LabeledGraph(tuple(labels), tuple(tuple(sorted(s)) for s in nbrs), max(sigma, 1))


def dump_graph(g: LabeledGraph) -> str:
    lines = [f"t {g.vertex_count} {g.edge_count}"]
    lines += [f"v {v} {g.labels[v]} {g.degree(v)}" for v in range(g.vertex_count)]
    lines += [f"e {u} {v}" for u, v in g.edges()]
    return "\n".join(lines) + "\n"


def read_graph(path, label_alphabet_size: int | None = None) -> LabeledGraph:
    with open(path, "rb") as fh:
        return load_graph(fh.read(), label_alphabet_size)


def write_graph(g: LabeledGraph, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dump_graph(g))


# -- vertex sets ------------------------------------------------------------

def vset(vertices: Iterable[int]) -> int:
    bits = 0
    for v in vertices:
        if not 0 <= v < MAX_QUERY_VERTICES:
            raise ValueError(f"query vertex {v} outside 0..{MAX_QUERY_VERTICES - 1}")
        bits |= 1 << v
    return bits


def members(bits: int) -> list[int]:
    out = []
    while bits:
        low = bits & -bits
        out.append(low.bit_length() - 1)
        bits ^= low
    return out


def popcount(bits: int) -> int:
    return bin(bits).count("1")


def neighbor_mask(q: LabeledGraph, u: int) -> int:
    return vset(q.adjacency[u])


def frontier(q: LabeledGraph, s: int) -> int:
    """Vertices outside s adjacent to some vertex in s."""
    out = 0
    for u in members(s):
        out |= neighbor_mask(q, u)
    return out & ~s


def connected(q: LabeledGraph, s: int) -> bool:
    """Whether the subgraph induced on vertex set ``s`` is connected.

    The empty set counts as connected.
    """
    if s == 0:
        return True
    if s >> q.vertex_count:
        raise ValueError("vertex set has bits beyond the query size")
    start = (s & -s).bit_length() - 1
    seen = 1 << start
    todo = deque([start])
    while todo:
        u = todo.popleft()
        for w in q.adjacency[u]:
            bit = 1 << w
            if s & bit and not seen & bit:
                seen |= bit
                todo.append(w)
    return seen == s


def validate_order(q: LabeledGraph, order: Sequence[int]) -> bool:
    """True iff ``order`` is a permutation of the query vertices in which every
    vertex after the first has an earlier neighbor."""
    n = q.vertex_count
    if len(order) != n or sorted(order) != list(range(n)):
        return False
    placed = 0
    for i, u in enumerate(order):
        if i > 0 and not neighbor_mask(q, u) & placed:
            return False
        placed |= 1 << u
    return True


def bfs_order(q: LabeledGraph, s: int) -> list[int]:
    """A prefix-connected order of the connected set ``s``, starting at its
    smallest vertex and visiting neighbors in ascending id order."""
    if s == 0:
        return []
    start = (s & -s).bit_length() - 1
    order = [start]
    seen = 1 << start
    i = 0
    while i < len(order):
        for w in q.adjacency[order[i]]:
            bit = 1 << w
            if s & bit and not seen & bit:
                seen |= bit
                order.append(w)
        i += 1
    if seen != s:
        raise ValueError("vertex set is not connected")
    return order


def triangles(g: LabeledGraph) -> list[tuple[int, int, int]]:
    """All triangles (a, b, c) with a < b < c, via sorted-list intersection."""
    out = []
    for a in range(g.vertex_count):
        higher = [b for b in g.adjacency[a] if b > a]
        hs = set(higher)
        for b in higher:
            for c in g.adjacency[b]:
                if c > b and c in hs:
                    out.append((a, b, c))
    return out

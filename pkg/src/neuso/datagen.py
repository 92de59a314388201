"""Synthetic labeled data graphs and query workloads."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import networkx as nx
import numpy as np

from .graph import MAX_QUERY_VERTICES, LabeledGraph, dump_graph, from_edges

MANIFEST_SCHEMA = 1
DENSE_DEGREE = 3.0


def zipf_labels(n: int, label_count: int, skew: float, rng: np.random.Generator) -> np.ndarray:
    weights = 1.0 / np.arange(1, label_count + 1, dtype=np.float64) ** skew
    return rng.choice(label_count, size=n, p=weights / weights.sum())


def gen_data_graph(n: int, avg_degree: float, label_count: int, skew: float = 1.0,
                   seed: int = 7) -> LabeledGraph:
    """Connected preferential-attachment graph with Zipf-distributed labels."""
    if n < 2:
        raise ValueError("need at least two vertices")
    if avg_degree <= 0 or label_count < 1 or skew < 0:
        raise ValueError("avg_degree and label_count must be positive, skew non-negative")
    m = max(1, round(avg_degree / 2))
    if m >= n:
        raise ValueError(f"average degree {avg_degree} is infeasible with {n} vertices")
    rng = np.random.default_rng(seed)
    graph = nx.barabasi_albert_graph(n, m, seed=int(rng.integers(2**31)))
    labels = zipf_labels(n, label_count, skew, rng)
    return from_edges(labels.tolist(), graph.edges(), label_count)


@dataclass(frozen=True)
class WorkloadSpec:
    sizes: tuple[int, ...] = (4, 8, 12, 16)
    per_size: int = 10
    seed: int = 7
    train_fraction: float = 0.8
    max_attempts: int = 1000

    def __post_init__(self):
        if not self.sizes or any(not 1 <= k <= MAX_QUERY_VERTICES for k in self.sizes):
            raise ValueError(f"query sizes must lie in [1, {MAX_QUERY_VERTICES}]")
        if self.per_size <= 0:
            raise ValueError("per_size must be positive")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in [0, 1]")


@dataclass
class WorkloadQuery:
    query_id: str
    graph: LabeledGraph
    vertices: tuple[int, ...]
    split: str = "train"

    @property
    def size(self) -> int:
        return self.graph.vertex_count

    @property
    def average_degree(self) -> float:
        return 2.0 * self.graph.edge_count / self.size

    @property
    def dense(self) -> bool:
        return self.average_degree > DENSE_DEGREE


def _walk(g: LabeledGraph, k: int, rng: np.random.Generator, max_steps: int) -> tuple[int, ...] | None:
    v = int(rng.integers(g.vertex_count))
    seen = {v}
    for _ in range(max_steps):
        if len(seen) == k:
            return tuple(sorted(seen))
        nbrs = g.adjacency[v]
        if not nbrs:
            return None
        v = nbrs[int(rng.integers(len(nbrs)))]
        seen.add(v)
    return tuple(sorted(seen)) if len(seen) == k else None


def gen_queries(g: LabeledGraph, spec: WorkloadSpec = WorkloadSpec()) -> list[WorkloadQuery]:
    """Induced connected subgraphs of ``g`` grown by random walks.

    Each query embeds in ``g`` by construction.  Vertex sets are never
    reused.  Queries are split into train/test by a seeded shuffle of ids.
    """
    rng = np.random.default_rng(spec.seed)
    used: set[tuple[int, ...]] = set()
    out: list[WorkloadQuery] = []
    width = len(str(spec.per_size - 1))
    for k in spec.sizes:
        if k > g.vertex_count:
            raise ValueError(f"query size {k} exceeds the data graph")
        made = attempts = 0
        while made < spec.per_size:
            attempts += 1
            if attempts > spec.max_attempts * spec.per_size:
                raise RuntimeError(f"could not extract {spec.per_size} distinct size-{k} queries")
            verts = _walk(g, k, rng, max_steps=50 * k)
            if verts is None or verts in used:
                continue
            used.add(verts)
            out.append(WorkloadQuery(f"q{k:02d}_{made:0{width}d}", g.induced(verts), verts))
            made += 1
    ids = sorted(q.query_id for q in out)
    perm = rng.permutation(len(ids))
    n_train = round(spec.train_fraction * len(ids))
    train_ids = {ids[i] for i in perm[:n_train]}
    for q in out:
        q.split = "train" if q.query_id in train_ids else "test"
    return out


def manifest(queries: list[WorkloadQuery], spec: WorkloadSpec, graph_file: str = "data.graph"
             ) -> dict:
    return {
        "schema_version": MANIFEST_SCHEMA,
        "seed": spec.seed,
        "graph": graph_file,
        "queries": [
            {
                "id": q.query_id,
                "size": q.size,
                "edges": q.graph.edge_count,
                "tag": "dense" if q.dense else "sparse",
                "split": q.split,
                "file": f"queries/{q.query_id}.graph",
                "vertices": list(q.vertices),
            }
            for q in queries
        ],
    }


def write_workload(root: Path, g: LabeledGraph, queries: list[WorkloadQuery],
                   spec: WorkloadSpec) -> Path:
    root = Path(root)
    (root / "queries").mkdir(parents=True, exist_ok=True)
    (root / "data.graph").write_text(dump_graph(g))
    for q in queries:
        (root / "queries" / f"{q.query_id}.graph").write_text(dump_graph(q.graph))
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest(queries, spec), indent=1) + "\n")
    return path

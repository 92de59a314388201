"""Candidate filtering and backtracking enumeration with a deterministic cost
meter.

Cost is measured in *probes*: every element inspected while intersecting a
candidate set with the adjacency lists of already-mapped neighbors counts
once per list it is tested against, plus one injectivity check per surviving
element whenever the partial match is non-empty.  Scanning the candidate set
of the first vertex of an order costs one probe per candidate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numba
import numpy as np

from .graph import LabeledGraph, bfs_order, connected, members, validate_order


class ContractError(ValueError):
    """A caller broke an operation's precondition."""


@dataclass(frozen=True)
class ExecutionBudget:
    max_probes: int | None = None
    max_matches: int | None = None
    max_elapsed: float | None = None  # seconds

    def __post_init__(self):
        for name in ("max_probes", "max_matches", "max_elapsed"):
            val = getattr(self, name)
            if val is not None and val <= 0:
                raise ValueError(f"{name} must be positive, got {val}")


UNLIMITED = ExecutionBudget()


@dataclass
class ExecutionStats:
    match_count: int
    probe_count: int
    truncated: bool
    elapsed: float = 0.0


@dataclass
class CandidateContext:
    candidates: list[np.ndarray]
    edge_counts: dict[tuple[int, int], int]
    _mask: np.ndarray | None = field(default=None, repr=False)

    def size(self, u: int) -> int:
        return len(self.candidates[u])

    def edge_count(self, u1: int, u2: int) -> int:
        return self.edge_counts[(u1, u2) if u1 < u2 else (u2, u1)]

    def mask(self, n_data: int) -> np.ndarray:
        if self._mask is None:
            m = np.zeros((len(self.candidates), n_data), dtype=np.bool_)
            for u, c in enumerate(self.candidates):
                m[u, c] = True
            self._mask = m
        return self._mask

    def lists(self) -> tuple[np.ndarray, np.ndarray]:
        off = np.zeros(len(self.candidates) + 1, dtype=np.int64)
        np.cumsum([len(c) for c in self.candidates], out=off[1:])
        flat = np.concatenate(self.candidates) if self.candidates else np.zeros(0, np.int64)
        return off, flat.astype(np.int64)


# -- filtering --------------------------------------------------------------

def _label_counts(g: LabeledGraph) -> np.ndarray:
    """Per data vertex, how many neighbors carry each label."""
    if "nlf" not in g._cache:
        off, nbr = g.csr()
        labels = np.asarray(g.labels, dtype=np.int64)
        counts = np.zeros((g.vertex_count, g.label_alphabet_size), dtype=np.int64)
        rows = np.repeat(np.arange(g.vertex_count), np.diff(off))
        np.add.at(counts, (rows, labels[nbr]), 1)
        g._cache["nlf"] = counts
    return g._cache["nlf"]


def nlf_filter(g: LabeledGraph, q: LabeledGraph) -> list[np.ndarray]:
    """Label + degree filter refined by neighbor-label frequencies."""
    off, _ = g.csr()
    deg = np.diff(off)
    labels = np.asarray(g.labels, dtype=np.int64)
    nlf = _label_counts(g)
    out = []
    for u in range(q.vertex_count):
        keep = (labels == q.labels[u]) & (deg >= q.degree(u))
        need: dict[int, int] = {}
        for w in q.adjacency[u]:
            need[q.labels[w]] = need.get(q.labels[w], 0) + 1
        for lab, cnt in need.items():
            if lab >= g.label_alphabet_size:
                keep[:] = False
                break
            keep &= nlf[:, lab] >= cnt
        out.append(np.flatnonzero(keep).astype(np.int64))
    return out


def label_filter(g: LabeledGraph, q: LabeledGraph) -> list[np.ndarray]:
    labels = np.asarray(g.labels, dtype=np.int64)
    return [np.flatnonzero(labels == q.labels[u]).astype(np.int64) for u in range(q.vertex_count)]


CandidateFilter = Callable[[LabeledGraph, LabeledGraph], list]


def build_candidates(g: LabeledGraph, q: LabeledGraph,
                     candidate_filter: CandidateFilter = nlf_filter) -> CandidateContext:
    """Candidate sets per query vertex plus candidate edge counts.

    ``edge_counts[(u1, u2)]`` (u1 < u2) counts ordered data-vertex pairs
    (a, b) with a in C(u1), b in C(u2) and (a, b) a data edge.
    """
    if q.vertex_count < 1:
        raise ContractError("query must have at least one vertex")
    cands = [np.asarray(c, dtype=np.int64) for c in candidate_filter(g, q)]
    off, nbr = g.csr()
    rows = np.repeat(np.arange(g.vertex_count), np.diff(off))
    member = np.zeros((q.vertex_count, g.vertex_count), dtype=np.bool_)
    for u, c in enumerate(cands):
        member[u, c] = True
    edge_counts = {}
    for u1, u2 in q.edges():
        edge_counts[(u1, u2)] = int(np.count_nonzero(member[u1][rows] & member[u2][nbr]))
    return CandidateContext(cands, edge_counts, member)


# -- reference (pure Python) path ------------------------------------------

def local_candidates(g: LabeledGraph, q: LabeledGraph, ctx: CandidateContext, u: int,
                     partial: Mapping[int, int], meter: list[int] | None = None) -> list[int]:
    """Sorted intersection of C(u) with the adjacency lists of the images of
    u's already-mapped neighbors.

    Lists are processed shortest first (ties: C(u) before neighbors, neighbors
    by query id); each element of the running result costs one probe per list
    it is tested against.  With no mapped neighbor the result is C(u) and the
    scan costs |C(u)|.  Probes are added to ``meter[0]`` when given.
    """
    cu = [int(x) for x in ctx.candidates[u]]
    mapped = [w for w in q.adjacency[u] if w in partial]
    if not mapped:
        if meter is not None:
            meter[0] += len(cu)
        return cu
    lists: list[Sequence[int]] = [cu] + [g.adjacency[partial[w]] for w in mapped]
    rank = sorted(range(len(lists)), key=lambda i: (len(lists[i]), i))
    result = list(lists[rank[0]])
    probes = 0
    for i in rank[1:]:
        probes += len(result)
        other = set(lists[i])
        result = [x for x in result if x in other]
    if meter is not None:
        meter[0] += probes
    return result


def enumerate_reference(g: LabeledGraph, q: LabeledGraph, ctx: CandidateContext,
                        order: Sequence[int]) -> ExecutionStats:
    """Plain recursive Alg.-1 style enumeration; slow but easy to audit."""
    if not validate_order(q, order):
        raise ContractError(f"invalid matching order {list(order)}")
    meter = [0]
    partial: dict[int, int] = {}
    used: set[int] = set()
    count = 0

    def rec(i: int) -> None:
        nonlocal count
        if i == len(order):
            count += 1
            return
        u = order[i]
        for v in local_candidates(g, q, ctx, u, partial, meter):
            if partial:
                meter[0] += 1
            if v in used:
                continue
            partial[u] = v
            used.add(v)
            rec(i + 1)
            del partial[u]
            used.discard(v)

    rec(0)
    return ExecutionStats(count, meter[0], False)


# -- compiled kernel --------------------------------------------------------

_CHECK_EVERY = 1 << 14


@numba.njit(cache=True)
def _now():
    with numba.objmode(t="float64"):
        t = time.perf_counter()
    return t


@numba.njit(cache=True)
def _contains(nbr, lo, hi, x):
    end = hi
    while lo < hi:
        mid = (lo + hi) >> 1
        if nbr[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo < end and nbr[lo] == x


@numba.njit(cache=True)
def _intersect(u, ws, nw, mapping, cand_off, cand, cmask, off, nbr, used, check_used,
               out, write, lens, rank):
    """Filter C(u) against adjacency lists of mapping[ws[:nw]].

    Returns (survivor_count, probes). Survivors are written to ``out`` when
    ``write`` is set.  List 0 is C(u); list j >= 1 is adj(mapping[ws[j-1]]).
    """
    nl = nw + 1
    lens[0] = cand_off[u + 1] - cand_off[u]
    for j in range(nw):
        y = mapping[ws[j]]
        lens[j + 1] = off[y + 1] - off[y]
    for j in range(nl):
        rank[j] = j
    # insertion sort by (len, index); stable
    for a in range(1, nl):
        key = rank[a]
        b = a - 1
        while b >= 0 and lens[rank[b]] > lens[key]:
            rank[b + 1] = rank[b]
            b -= 1
        rank[b + 1] = key
    first = rank[0]
    if first == 0:
        base_arr = cand
        base_lo = cand_off[u]
        base_hi = cand_off[u + 1]
    else:
        y = mapping[ws[first - 1]]
        base_arr = nbr
        base_lo = off[y]
        base_hi = off[y + 1]
    probes = 0
    count = 0
    for p in range(base_lo, base_hi):
        x = base_arr[p]
        ok = True
        for r in range(1, nl):
            j = rank[r]
            probes += 1
            if j == 0:
                if not cmask[u, x]:
                    ok = False
                    break
            else:
                y = mapping[ws[j - 1]]
                if not _contains(nbr, off[y], off[y + 1], x):
                    ok = False
                    break
        if not ok:
            continue
        if check_used:
            probes += 1
            if used[x]:
                continue
        if write:
            out[count] = x
        count += 1
    return count, probes


@numba.njit(cache=True)
def _enumerate_kernel(off, nbr, cand_off, cand, cmask, order, bwd_off, bwd,
                      ext, ext_off, ext_bwd, max_probes, max_matches, max_ext_probes,
                      deadline, n_data):
    k = order.shape[0]
    nq = cmask.shape[0]
    mapping = np.full(nq, -1, dtype=np.int64)
    used = np.zeros(n_data, dtype=np.bool_)
    maxlen = 1
    for u in range(nq):
        c = cand_off[u + 1] - cand_off[u]
        if c > maxlen:
            maxlen = c
    buf = np.empty((max(k, 1), maxlen), dtype=np.int64)
    blen = np.zeros(max(k, 1), dtype=np.int64)
    bpos = np.zeros(max(k, 1), dtype=np.int64)
    lens = np.empty(nq + 1, dtype=np.int64)
    rank = np.empty(nq + 1, dtype=np.int64)
    m = ext.shape[0]
    ext_probes = np.zeros(m, dtype=np.int64)
    ext_card = np.zeros(m, dtype=np.int64)
    ext_dead = np.zeros(m, dtype=np.bool_)
    matches = 0
    probes = 0
    truncated = False
    if k == 0:
        return matches, probes, truncated, ext_probes, ext_card, ext_dead

    u0 = order[0]
    n0 = cand_off[u0 + 1] - cand_off[u0]
    for p in range(n0):
        buf[0, p] = cand[cand_off[u0] + p]
    blen[0] = n0
    bpos[0] = 0
    probes += n0
    if max_probes >= 0 and probes > max_probes:
        return matches, probes, True, ext_probes, ext_card, ext_dead

    depth = 0
    ticks = 0
    alive = m
    while depth >= 0:
        ticks += 1
        if ticks >= 16384:
            ticks = 0
            if deadline > 0.0 and _now() > deadline:
                truncated = True
                break
        if bpos[depth] >= blen[depth]:
            depth -= 1
            if depth >= 0:
                used[mapping[order[depth]]] = False
            continue
        v = buf[depth, bpos[depth]]
        bpos[depth] += 1
        u = order[depth]
        mapping[u] = v
        used[v] = True
        if depth == k - 1:
            matches += 1
            for j in range(m):
                if ext_dead[j]:
                    continue
                e = ext[j]
                nw = ext_off[j + 1] - ext_off[j]
                c, pr = _intersect(e, ext_bwd[ext_off[j]:ext_off[j + 1]], nw, mapping,
                                   cand_off, cand, cmask, off, nbr, used, True,
                                   buf[0], False, lens, rank)
                ext_probes[j] += pr
                ext_card[j] += c
                if max_ext_probes >= 0 and ext_probes[j] > max_ext_probes:
                    ext_dead[j] = True
                    alive -= 1
            used[v] = False
            if max_matches >= 0 and matches > max_matches:
                truncated = True
                break
            if m > 0 and alive == 0:
                truncated = True
                break
            continue
        depth += 1
        un = order[depth]
        nw = bwd_off[depth + 1] - bwd_off[depth]
        c, pr = _intersect(un, bwd[bwd_off[depth]:bwd_off[depth + 1]], nw, mapping,
                           cand_off, cand, cmask, off, nbr, used, True,
                           buf[depth], True, lens, rank)
        probes += pr
        blen[depth] = c
        bpos[depth] = 0
        if max_probes >= 0 and probes > max_probes:
            truncated = True
            break
    return matches, probes, truncated, ext_probes, ext_card, ext_dead


def _backward_arrays(q: LabeledGraph, order: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    pos = {u: i for i, u in enumerate(order)}
    off = [0]
    flat: list[int] = []
    for i, u in enumerate(order):
        flat.extend(w for w in q.adjacency[u] if w in pos and pos[w] < i)
        off.append(len(flat))
    return np.asarray(off, dtype=np.int64), np.asarray(flat, dtype=np.int64)


@dataclass
class _Run:
    stats: ExecutionStats
    ext_probes: np.ndarray
    ext_card: np.ndarray
    ext_dead: np.ndarray


def _run(g: LabeledGraph, q: LabeledGraph, ctx: CandidateContext, order: Sequence[int],
         budget: ExecutionBudget, ext: Sequence[int] = (), ext_budget: int | None = None) -> _Run:
    off, nbr = g.csr()
    cand_off, cand = ctx.lists()
    cmask = ctx.mask(g.vertex_count)
    order_arr = np.asarray(order, dtype=np.int64)
    bwd_off, bwd = _backward_arrays(q, order)
    in_order = set(order)
    e_off = [0]
    e_flat: list[int] = []
    for e in ext:
        e_flat.extend(w for w in q.adjacency[e] if w in in_order)
        e_off.append(len(e_flat))
    start = time.perf_counter()
    deadline = start + budget.max_elapsed if budget.max_elapsed else 0.0
    res = _enumerate_kernel(
        off, nbr, cand_off, cand, cmask, order_arr, bwd_off, bwd,
        np.asarray(ext, dtype=np.int64), np.asarray(e_off, dtype=np.int64),
        np.asarray(e_flat, dtype=np.int64),
        -1 if budget.max_probes is None else int(budget.max_probes),
        -1 if budget.max_matches is None else int(budget.max_matches),
        -1 if ext_budget is None else int(ext_budget),
        float(deadline), g.vertex_count)
    matches, probes, truncated, ext_probes, ext_card, ext_dead = res
    stats = ExecutionStats(int(matches), int(probes), bool(truncated), time.perf_counter() - start)
    return _Run(stats, ext_probes, ext_card, ext_dead)


def enumerate_matches(g: LabeledGraph, q: LabeledGraph, ctx: CandidateContext,
                      order: Sequence[int], budget: ExecutionBudget = UNLIMITED) -> ExecutionStats:
    """Count subgraph isomorphisms of q in g following ``order``."""
    if not validate_order(q, order):
        raise ContractError(f"invalid matching order {list(order)}")
    return _run(g, q, ctx, order, budget).stats


def _check_subset(q: LabeledGraph, s: int) -> None:
    if s >> q.vertex_count:
        raise ContractError("vertex set has bits beyond the query size")
    if not connected(q, s):
        raise ContractError(f"vertex set {members(s)} is not connected")


def count_subquery(g: LabeledGraph, q: LabeledGraph, ctx: CandidateContext, s: int,
                   budget: ExecutionBudget = UNLIMITED) -> ExecutionStats:
    """Matches of the subquery induced on ``s`` (candidates still come from
    the filter run on the whole query)."""
    _check_subset(q, s)
    if s == 0:
        return ExecutionStats(1, 0, False)
    return _run(g, q, ctx, bfs_order(q, s), budget).stats


def measure_transition(g: LabeledGraph, q: LabeledGraph, ctx: CandidateContext, src: int,
                       add: int, budget: ExecutionBudget = UNLIMITED) -> tuple[int, bool]:
    """Probe cost of extending every match of ``src`` by query vertex ``add``.

    Returns ``(cost, truncated)``; a truncated cost must be discarded.
    """
    _check_subset(q, src)
    if src >> add & 1:
        raise ContractError(f"vertex {add} already in the source state")
    if src == 0:
        return ctx.size(add), False
    if not any(src >> w & 1 for w in q.adjacency[add]):
        raise ContractError(f"vertex {add} is not adjacent to the source state")
    run = _run(g, q, ctx, bfs_order(q, src), budget, ext=[add], ext_budget=budget.max_probes)
    truncated = run.stats.truncated or bool(run.ext_dead[0])
    return int(run.ext_probes[0]), truncated


def expand_state(g: LabeledGraph, q: LabeledGraph, ctx: CandidateContext, s: int,
                 budget: ExecutionBudget = UNLIMITED):
    """Enumerate the matches of ``s`` once and, at every match, price the
    extension by each frontier vertex.

    Returns ``(stats, {add: (cost, cardinality, truncated)})``.
    """
    from .graph import frontier

    if s == 0:
        out = {u: (ctx.size(u), ctx.size(u), False) for u in range(q.vertex_count)}
        return ExecutionStats(1, 0, False), out
    ext = members(frontier(q, s))
    run = _run(g, q, ctx, bfs_order(q, s), budget, ext=ext, ext_budget=budget.max_probes)
    out = {}
    for j, u in enumerate(ext):
        dead = run.stats.truncated or bool(run.ext_dead[j])
        out[u] = (int(run.ext_probes[j]), int(run.ext_card[j]), dead)
    return run.stats, out

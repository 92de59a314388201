"""Cardinality-Cost Graphs: the lattice of connected subqueries of one query,
annotated with measured cardinalities and transition costs, plus the
training-data collection built on top of it."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .graph import LabeledGraph, frontier, members, popcount, validate_order
from .matcher import CandidateContext, ExecutionBudget, expand_state

DEFAULT_STATE_LIMIT = 5000
DEFAULT_BUDGET = ExecutionBudget(max_probes=10**7, max_matches=10**6, max_elapsed=10.0)


class Exploration(str, Enum):
    FULL = "Full"
    PARTIAL = "Partial"
    UNVISITED = "Unvisited"


class CcgTooLarge(RuntimeError):
    """The query has more connected subqueries than the state ceiling allows;
    use :func:`collect_partial` instead."""


@dataclass
class StateRecord:
    cardinality: int | None = None
    min_cost: int | None = None
    explored: Exploration = Exploration.UNVISITED


@dataclass
class TransitionRecord:
    cost: int
    truncated: bool = False


@dataclass
class Ccg:
    n: int
    states: dict[int, StateRecord] = field(default_factory=dict)
    transitions: dict[tuple[int, int], TransitionRecord] = field(default_factory=dict)
    unreachable: set[int] = field(default_factory=set)

    @property
    def root(self) -> int:
        return 0

    @property
    def goal(self) -> int:
        return (1 << self.n) - 1

    def target(self, src: int, add: int) -> int:
        return src | 1 << add

    def in_transitions(self, s: int) -> list[tuple[int, TransitionRecord]]:
        out = []
        for u in members(s):
            rec = self.transitions.get((s & ~(1 << u), u))
            if rec is not None:
                out.append((s & ~(1 << u), rec))
        return out

    def cost(self, src: int, add: int) -> int | None:
        rec = self.transitions.get((src, add))
        if rec is None or rec.truncated:
            return None
        return rec.cost

    def path_cost(self, order: Sequence[int]) -> int | None:
        """Length of the path an order traces; None if any step is unknown."""
        total, s = 0, 0
        for u in order:
            c = self.cost(s, u)
            if c is None:
                return None
            total += c
            s |= 1 << u
        return total


def connected_states(q: LabeledGraph, limit: int | None = None) -> list[int]:
    """All connected vertex sets of q plus the empty set, by size then value.

    Raises CcgTooLarge once more than ``limit`` states have been found.
    """
    layer = {1 << u for u in range(q.vertex_count)}
    out = [0]
    while layer:
        out.extend(sorted(layer))
        if limit is not None and len(out) > limit:
            raise CcgTooLarge(f"query has more than {limit} connected subqueries")
        nxt = set()
        for s in layer:
            for u in members(frontier(q, s)):
                nxt.add(s | 1 << u)
        layer = nxt
    return out


def count_states(q: LabeledGraph, limit: int) -> int | None:
    """Number of CCG states, or None when it exceeds ``limit``."""
    try:
        return len(connected_states(q, limit))
    except CcgTooLarge:
        return None


def build_full_ccg(g: LabeledGraph, q: LabeledGraph, ctx: CandidateContext,
                   budget: ExecutionBudget = DEFAULT_BUDGET,
                   state_limit: int = DEFAULT_STATE_LIMIT) -> Ccg:
    """Materialize every state and transition with measured values.

    Each state's matches are enumerated once; at every match the extension
    by each frontier vertex is priced, which yields both the outgoing
    transition costs and the successor cardinalities.
    """
    states = connected_states(q, state_limit)
    ccg = Ccg(q.vertex_count)
    for s in states:
        ccg.states[s] = StateRecord(explored=Exploration.FULL)
    ccg.states[0].cardinality = 1
    for s in states:
        stats, ext = expand_state(g, q, ctx, s, budget)
        rec = ccg.states[s]
        if s != 0 and not stats.truncated:
            rec.cardinality = stats.match_count
        for u, (cost, card, dead) in ext.items():
            t = s | 1 << u
            ccg.transitions[(s, u)] = TransitionRecord(cost, dead)
            if not dead and ccg.states[t].cardinality is None:
                ccg.states[t].cardinality = card
    return ccg


def exact_min_costs(ccg: Ccg) -> Ccg:
    """Fill ``min_cost`` with shortest-path distances from the empty state.

    States are relaxed in size order, which is a topological order of the
    layered DAG.  Truncated transitions are ignored; states left without a
    finite distance are collected in ``ccg.unreachable``.
    """
    ccg.unreachable.clear()
    for s in sorted(ccg.states, key=lambda s: (popcount(s), s)):
        rec = ccg.states[s]
        if s == 0:
            rec.min_cost = 0
            continue
        best = None
        for src, tr in ccg.in_transitions(s):
            if tr.truncated:
                continue
            base = ccg.states.get(src)
            if base is None or base.min_cost is None:
                continue
            val = base.min_cost + tr.cost
            if best is None or val < best:
                best = val
        rec.min_cost = best if rec.cardinality is not None else None
        if best is None:
            ccg.unreachable.add(s)
    return ccg


# -- training data -----------------------------------------------------------

@dataclass
class TrainingSample:
    query_id: str
    state: int
    exploration: Exploration
    cardinality: int | None
    in_transitions: list[tuple[int, int]]
    min_cost: int | None = None

    def to_json(self) -> str:
        return json.dumps({
            "query_id": self.query_id,
            "state": self.state,
            "exploration": self.exploration.value,
            "cardinality": self.cardinality,
            "min_cost": self.min_cost,
            "in_transitions": [{"from": a, "cost": c} for a, c in self.in_transitions],
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> TrainingSample:
        d = json.loads(line)
        return cls(
            query_id=d["query_id"],
            state=int(d["state"]),
            exploration=Exploration(d["exploration"]),
            cardinality=d["cardinality"],
            in_transitions=[(int(t["from"]), int(t["cost"])) for t in d["in_transitions"]],
            min_cost=d["min_cost"],
        )


def samples_from_ccg(ccg: Ccg, query_id: str) -> list[TrainingSample]:
    out = []
    for s in sorted(ccg.states, key=lambda s: (popcount(s), s)):
        rec = ccg.states[s]
        ins = [(src, tr.cost) for src, tr in ccg.in_transitions(s) if not tr.truncated]
        ins.sort()
        if s != 0 and rec.cardinality is None and not ins:
            continue
        out.append(TrainingSample(query_id, s, Exploration.FULL, rec.cardinality, ins,
                                  rec.min_cost))
    return out


def collect_partial(g: LabeledGraph, q: LabeledGraph, ctx: CandidateContext,
                    seed_order: Sequence[int], budget: ExecutionBudget = DEFAULT_BUDGET,
                    query_id: str = "") -> list[TrainingSample]:
    """Measure the states along ``seed_order`` and each one's out-neighbors.

    Only cardinalities and transition costs are recorded.  If expanding a path
    state is truncated, collection stops there.
    """
    if not validate_order(q, seed_order):
        raise ValueError(f"invalid seed order {list(seed_order)}")
    card: dict[int, int | None] = {0: 1}
    ins: dict[int, list[tuple[int, int]]] = {0: []}
    first = 1 << seed_order[0]
    ins[first] = [(0, ctx.size(seed_order[0]))]
    card[first] = ctx.size(seed_order[0])
    s = first
    for i in range(1, len(seed_order)):
        stats, ext = expand_state(g, q, ctx, s, budget)
        if stats.truncated:
            break
        card[s] = stats.match_count
        for u, (cost, c, dead) in ext.items():
            if dead:
                continue
            t = s | 1 << u
            ins.setdefault(t, []).append((s, cost))
            card.setdefault(t, c)
        nxt = s | 1 << seed_order[i]
        if nxt not in ins:
            break
        s = nxt
    out = []
    for st in sorted(ins, key=lambda x: (popcount(x), x)):
        out.append(TrainingSample(query_id, st, Exploration.PARTIAL, card.get(st),
                                  sorted(ins[st])))
    return out


def export_samples(samples: Iterable[TrainingSample]) -> str:
    return "".join(s.to_json() + "\n" for s in samples)


def load_samples(text: str) -> list[TrainingSample]:
    return [TrainingSample.from_json(line) for line in text.splitlines() if line.strip()]

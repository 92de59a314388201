"""Matching-order planners: the learned top-down greedy walk, an exact
shortest-path oracle, the candidate-ratio greedy planner and two simple
heuristics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from .ccg import DEFAULT_BUDGET, DEFAULT_STATE_LIMIT, Ccg, build_full_ccg, exact_min_costs
from .estimator import ModelBundle, QueryModel, gcbo_cost
from .graph import LabeledGraph, connected, frontier, members, popcount, validate_order
from .matcher import CandidateContext, ExecutionBudget

PLANNERS = ("neuso", "gcbo", "candidate_size", "backward_edges", "exact")


@dataclass
class PlanStep:
    state: int
    predecessor: int
    step_cost: float | None = None
    min_cost: float | None = None


@dataclass
class PlanTrace:
    planner: str
    order: list[int]
    steps: list[PlanStep] = field(default_factory=list)
    model_invocations: int = 0

    def to_dict(self) -> dict:
        return {
            "planner": self.planner,
            "order": list(self.order),
            "model_invocations": self.model_invocations,
            "steps": [{"state": s.state, "predecessor": s.predecessor,
                       "step_cost": s.step_cost, "min_cost": s.min_cost} for s in self.steps],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def _steps_from_order(order: Sequence[int], costs=None, mcs=None) -> list[PlanStep]:
    """Top-down step records for an order built front to back."""
    prefixes = [0]
    for u in order:
        prefixes.append(prefixes[-1] | 1 << u)
    steps = []
    for i in range(len(order), 0, -1):
        steps.append(PlanStep(prefixes[i], prefixes[i - 1],
                              None if costs is None else costs[i - 1],
                              None if mcs is None else mcs[i - 1]))
    return steps


# -- learned top-down walk -------------------------------------------------------

class Estimator(Protocol):
    invocations: int

    def step_costs(self, pairs: list[tuple[int, int]]) -> list[float]: ...

    def min_costs(self, states: list[int]) -> list[float]: ...


class NeuralEstimator:
    """Heads of a trained bundle over one query; the encoder runs once."""

    def __init__(self, bundle: ModelBundle, q: LabeledGraph, ctx: CandidateContext):
        self.model = QueryModel(bundle, q, ctx)
        self.invocations = 0

    def step_costs(self, pairs):
        self.invocations += len(pairs)
        return self.model.predict_cost(pairs)

    def min_costs(self, states):
        out = self.model.predict_min_cost(states)
        self.invocations += sum(1 for s in states if s)
        return out


class OracleEstimator:
    """Measured transition costs and exact minimum costs of a full CCG."""

    def __init__(self, ccg: Ccg):
        self.ccg = ccg
        self.invocations = 0

    def step_costs(self, pairs):
        self.invocations += len(pairs)
        out = []
        for a, b in pairs:
            c = self.ccg.cost(a, (b & ~a).bit_length() - 1)
            out.append(math.inf if c is None else float(c))
        return out

    def min_costs(self, states):
        self.invocations += sum(1 for s in states if s)
        out = []
        for s in states:
            mc = self.ccg.states[s].min_cost if s else 0
            out.append(math.inf if mc is None else float(mc))
        return out


def in_neighbors(q: LabeledGraph, s: int) -> list[int]:
    """Vertices of ``s`` whose removal leaves a connected (or empty) state."""
    return [u for u in members(s) if connected(q, s & ~(1 << u))]


def plan_neuso(q: LabeledGraph, ctx: CandidateContext, estimator: ModelBundle | Estimator
               ) -> PlanTrace:
    """Walk from the full query down to the empty state, each time removing
    the vertex that minimizes estimated step cost plus estimated minimum
    cost of what remains; removed vertices are prepended to the order."""
    est = NeuralEstimator(estimator, q, ctx) if isinstance(estimator, ModelBundle) else estimator
    s = (1 << q.vertex_count) - 1
    order: list[int] = []
    steps = []
    while s:
        cands = in_neighbors(q, s)
        preds = [s & ~(1 << u) for u in cands]
        costs = est.step_costs([(p, s) for p in preds])
        mcs = est.min_costs(preds)
        best = min(range(len(cands)), key=lambda i: (costs[i] + mcs[i], cands[i]))
        steps.append(PlanStep(s, preds[best], costs[best], mcs[best]))
        order.insert(0, cands[best])
        s = preds[best]
    return PlanTrace("neuso", order, steps, est.invocations)


# -- exact oracle ----------------------------------------------------------------

def plan_exact(g: LabeledGraph, q: LabeledGraph, ctx: CandidateContext,
               budget: ExecutionBudget = DEFAULT_BUDGET, state_limit: int = DEFAULT_STATE_LIMIT,
               ccg: Ccg | None = None) -> PlanTrace:
    """Shortest path through the measured CCG; among optimal paths the
    lexicographically smallest order is returned."""
    if ccg is None:
        ccg = exact_min_costs(build_full_ccg(g, q, ctx, budget, state_limit))
    goal = ccg.goal
    togo = {goal: 0}
    for s in sorted(ccg.states, key=lambda s: (-popcount(s), s)):
        if s == goal:
            continue
        best = math.inf
        for u in members(frontier(q, s) if s else goal):
            c = ccg.cost(s, u)
            rest = togo.get(s | 1 << u, math.inf)
            if c is not None and c + rest < best:
                best = c + rest
        togo[s] = best
    if math.isinf(togo[0]):
        raise RuntimeError("no fully measured path through the CCG; raise the budget")
    order, costs, mcs, s, acc = [], [], [], 0, 0
    while s != goal:
        for u in members(frontier(q, s) if s else goal):
            c = ccg.cost(s, u)
            if c is not None and c + togo.get(s | 1 << u, math.inf) == togo[s]:
                break
        order.append(u)
        acc += c
        costs.append(float(c))
        mcs.append(float(acc - c))
        s |= 1 << u
    return PlanTrace("exact", order, _steps_from_order(order, costs, mcs))


# -- traditional planners ----------------------------------------------------------

def plan_gcbo(q: LabeledGraph, ctx: CandidateContext) -> PlanTrace:
    """Bottom-up greedy on the candidate-ratio cost model."""
    n = q.vertex_count
    start = min(range(n), key=lambda u: (ctx.size(u), u))
    card = float(ctx.size(start))
    order, costs, mcs = [start], [card], [0.0]
    s = 1 << start
    total = card
    while popcount(s) < n:
        best = None
        for w in members(frontier(q, s)):
            c = gcbo_cost(card, q, ctx, s, w)
            if best is None or c < best[0]:
                best = (c, w)
        c, w = best
        order.append(w)
        costs.append(c)
        mcs.append(total)
        total += c
        card = c
        s |= 1 << w
    return PlanTrace("gcbo", order, _steps_from_order(order, costs, mcs))


def plan_baseline(q: LabeledGraph, ctx: CandidateContext, kind: str) -> PlanTrace:
    n = q.vertex_count
    if kind == "candidate_size":
        start = min(range(n), key=lambda u: (ctx.size(u), u))

        def key(s, w):
            return (ctx.size(w), w)
    elif kind == "backward_edges":
        start = min(range(n), key=lambda u: (-q.degree(u), u))

        def key(s, w):
            back = sum(1 for v in q.adjacency[w] if s >> v & 1)
            return (-back, w)
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    order, s = [start], 1 << start
    while popcount(s) < n:
        w = min(members(frontier(q, s)), key=lambda w: key(s, w))
        order.append(w)
        s |= 1 << w
    return PlanTrace(kind, order, _steps_from_order(order))


def make_plan(name: str, g: LabeledGraph, q: LabeledGraph, ctx: CandidateContext,
              bundle: ModelBundle | None = None, budget: ExecutionBudget = DEFAULT_BUDGET
              ) -> PlanTrace:
    if name == "neuso":
        if bundle is None:
            raise ValueError("the neuso planner needs a trained model")
        trace = plan_neuso(q, ctx, bundle)
    elif name == "gcbo":
        trace = plan_gcbo(q, ctx)
    elif name in ("candidate_size", "backward_edges"):
        trace = plan_baseline(q, ctx, name)
    elif name == "exact":
        trace = plan_exact(g, q, ctx, budget)
    else:
        raise ValueError(f"unknown planner {name!r}; choose from {', '.join(PLANNERS)}")
    assert validate_order(q, trace.order)
    return trace

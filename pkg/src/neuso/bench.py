"""Training-data collection over a workload, the planner benchmark and
estimation-quality reports."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .ccg import (DEFAULT_BUDGET, DEFAULT_STATE_LIMIT, TrainingSample, build_full_ccg,
                  collect_partial, count_states, exact_min_costs, samples_from_ccg)
from .datagen import WorkloadQuery
from .estimator import ModelBundle, QueryData, QueryModel
from .graph import LabeledGraph
from .matcher import ExecutionBudget, build_candidates, enumerate_matches
from .planner import PLANNERS, make_plan, plan_gcbo

UNSOLVED_PROBES = 10**8
REPORT_SCHEMA = 1


# -- collection -------------------------------------------------------------------

def collect_query(g: LabeledGraph, wq: WorkloadQuery, budget: ExecutionBudget = DEFAULT_BUDGET,
                  state_limit: int = DEFAULT_STATE_LIMIT) -> list[TrainingSample]:
    """Full CCG when the query has at most ``state_limit`` states, otherwise
    the seed path of the candidate-ratio planner plus its out-neighbors."""
    ctx = build_candidates(g, wq.graph)
    if count_states(wq.graph, state_limit) is not None:
        ccg = exact_min_costs(build_full_ccg(g, wq.graph, ctx, budget, state_limit))
        return samples_from_ccg(ccg, wq.query_id)
    order = plan_gcbo(wq.graph, ctx).order
    return collect_partial(g, wq.graph, ctx, order, budget, wq.query_id)


def collect_workload(g: LabeledGraph, queries: Iterable[WorkloadQuery],
                     budget: ExecutionBudget = DEFAULT_BUDGET,
                     state_limit: int = DEFAULT_STATE_LIMIT, progress=None
                     ) -> list[TrainingSample]:
    out = []
    for wq in sorted(queries, key=lambda w: w.query_id):
        out.extend(collect_query(g, wq, budget, state_limit))
        if progress is not None:
            progress(wq.query_id)
    return out


def training_set(g: LabeledGraph, queries: Sequence[WorkloadQuery],
                 samples: Iterable[TrainingSample]) -> list[QueryData]:
    by_id: dict[str, list[TrainingSample]] = defaultdict(list)
    for s in samples:
        by_id[s.query_id].append(s)
    out = []
    for wq in sorted(queries, key=lambda w: w.query_id):
        if by_id.get(wq.query_id):
            out.append(QueryData(wq.query_id, wq.graph, build_candidates(g, wq.graph),
                                 by_id[wq.query_id]))
    return out


# -- benchmark --------------------------------------------------------------------

@dataclass
class BenchRow:
    query_id: str
    size: int
    planner: str
    probe_count: int
    match_count: int
    truncated: bool
    elapsed: float
    model_invocations: int
    plan_json: str


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    probe_budget: int = UNSOLVED_PROBES

    def planners(self) -> list[str]:
        return [p for p in PLANNERS if any(r.planner == p for r in self.rows)]

    def capped(self, row: BenchRow) -> int:
        return min(max(row.probe_count, 1), self.probe_budget) if row.truncated else \
            max(row.probe_count, 1)

    def by_planner(self, planner: str) -> dict[str, BenchRow]:
        return {r.query_id: r for r in self.rows if r.planner == planner}

    def geomean(self, planner: str) -> float:
        rows = self.by_planner(planner).values()
        return math.exp(float(np.mean([math.log(self.capped(r)) for r in rows])))

    def speedup(self, planner: str, baseline: str) -> float:
        """Geometric mean over shared queries of baseline probes / planner probes."""
        mine, base = self.by_planner(planner), self.by_planner(baseline)
        ids = sorted(mine.keys() & base.keys())
        logs = [math.log(self.capped(base[i]) / self.capped(mine[i])) for i in ids]
        return math.exp(float(np.mean(logs)))

    def unsolved(self, planner: str) -> int:
        return sum(1 for r in self.by_planner(planner).values() if r.truncated)

    def summary(self, baseline: str = "candidate_size") -> dict:
        out = {"schema_version": REPORT_SCHEMA, "probe_budget": self.probe_budget,
               "baseline": baseline, "planners": {}}
        for p in self.planners():
            rows = self.by_planner(p).values()
            entry = {
                "queries": len(rows),
                "geomean_probes": round(self.geomean(p), 6),
                "unsolved": self.unsolved(p),
                "max_model_invocations": max(r.model_invocations for r in rows),
            }
            if baseline in self.planners():
                entry["speedup_vs_baseline"] = round(self.speedup(p, baseline), 6)
            out["planners"][p] = entry
        return out

    def to_csv(self, timings: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["query_id", "size", "planner", "probe_count", "match_count", "truncated",
                "model_invocations"]
        w.writerow(head + (["elapsed"] if timings else []) + ["plan_json"])
        for r in self.rows:
            row = [r.query_id, r.size, r.planner, r.probe_count, r.match_count,
                   int(r.truncated), r.model_invocations]
            w.writerow(row + ([f"{r.elapsed:.6f}"] if timings else []) + [r.plan_json])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, probe_budget: int = UNSOLVED_PROBES) -> BenchReport:
        rows = []
        for d in csv.DictReader(io.StringIO(text)):
            rows.append(BenchRow(d["query_id"], int(d["size"]), d["planner"],
                                 int(d["probe_count"]), int(d["match_count"]),
                                 d["truncated"] == "1", float(d.get("elapsed") or 0.0),
                                 int(d["model_invocations"]), d["plan_json"]))
        return cls(rows, probe_budget)


def run_bench(g: LabeledGraph, queries: Sequence[WorkloadQuery], planners: Sequence[str],
              bundle: ModelBundle | None = None, probe_budget: int = UNSOLVED_PROBES,
              plan_budget: ExecutionBudget = DEFAULT_BUDGET, progress=None) -> BenchReport:
    """Plan and execute every test-split query with every planner.

    Training-split queries are skipped.  Rows are ordered by query id, then
    by planner registration order.
    """
    unknown = set(planners) - set(PLANNERS)
    if unknown:
        raise ValueError(f"unknown planners: {sorted(unknown)}")
    budget = ExecutionBudget(max_probes=probe_budget)
    report = BenchReport(probe_budget=probe_budget)
    for wq in sorted((w for w in queries if w.split == "test"), key=lambda w: w.query_id):
        ctx = build_candidates(g, wq.graph)
        for p in (p for p in PLANNERS if p in planners):
            trace = make_plan(p, g, wq.graph, ctx, bundle, plan_budget)
            stats = enumerate_matches(g, wq.graph, ctx, trace.order, budget)
            report.rows.append(BenchRow(wq.query_id, wq.size, p, stats.probe_count,
                                        stats.match_count, stats.truncated, stats.elapsed,
                                        trace.model_invocations, trace.to_json()))
            if progress is not None:
                progress(report.rows[-1])
    return report


# -- estimation quality -------------------------------------------------------------

def log_ratio(pred: float, truth: float) -> float:
    return math.log10((1.0 + pred) / (1.0 + truth))


def qerror_report(preds: Sequence[float], truths: Sequence[float], sizes: Sequence[int]
                  ) -> dict[int, dict[str, float]]:
    """Per query-size quantiles of log10((1 + pred) / (1 + truth))."""
    if not preds:
        raise ValueError("no predictions to report")
    if not len(preds) == len(truths) == len(sizes):
        raise ValueError("preds, truths and sizes must have equal length")
    groups: dict[int, list[float]] = defaultdict(list)
    for p, t, k in zip(preds, truths, sizes):
        groups[k].append(log_ratio(p, t))
    out = {}
    for k in sorted(groups):
        v = np.asarray(groups[k])
        out[k] = {"count": len(v), "min": float(v.min()), "p25": float(np.quantile(v, 0.25)),
                  "p50": float(np.quantile(v, 0.5)), "p75": float(np.quantile(v, 0.75)),
                  "max": float(v.max())}
    return out


def card_predictions(bundle: ModelBundle, data: Sequence[QueryData]
                     ) -> tuple[list[float], list[float], list[int]]:
    """Predicted and true cardinalities of every labeled nonempty state."""
    preds, truths, sizes = [], [], []
    for qd in data:
        states = [s for s in qd.samples if s.state and s.cardinality is not None]
        if not states:
            continue
        model = QueryModel(bundle, qd.q, qd.ctx)
        preds.extend(model.predict_card([s.state for s in states]))
        truths.extend(float(s.cardinality) for s in states)
        sizes.extend(qd.q.vertex_count for _ in states)
    return preds, truths, sizes


def constraint_violation_rate(bundle: ModelBundle, data: Sequence[QueryData]) -> float:
    """Share of explored states whose predicted minimum cost lies below the
    cheapest predicted step into them."""
    total = bad = 0
    for qd in data:
        pairs, targets = [], []
        for s in qd.samples:
            if s.state and s.in_transitions:
                targets.append(s.state)
                pairs.extend((a, s.state) for a, _ in s.in_transitions)
        if not targets:
            continue
        model = QueryModel(bundle, qd.q, qd.ctx)
        costs = model.predict_cost(pairs)
        mcs = dict(zip(targets, model.predict_min_cost(targets)))
        best: dict[int, float] = {}
        for (_, b), c in zip(pairs, costs):
            best[b] = min(best.get(b, math.inf), c)
        for t in targets:
            total += 1
            bad += mcs[t] < best[t]
    return bad / total if total else 0.0


def summary_json(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"

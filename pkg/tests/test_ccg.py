import json
import random

import pytest

from neuso.ccg import (Ccg, CcgTooLarge, Exploration, StateRecord, TrainingSample,
                       TransitionRecord, build_full_ccg, collect_partial, connected_states,
                       count_states, exact_min_costs, export_samples, load_samples,
                       samples_from_ccg)
from neuso.graph import bfs_order, connected, from_edges, popcount
from neuso.matcher import ExecutionBudget, build_candidates, enumerate_matches
from oracles import dijkstra, random_connected_query, random_graph


def small_instance(seed, n_query=5):
    rng = random.Random(seed)
    g = random_graph(rng, 40, 0.15, 2)
    q = random_connected_query(rng, rng.randint(1, n_query), 0.5, 2)
    return g, q, build_candidates(g, q)


def test_path_states(path3):
    assert connected_states(path3) == [0, 0b001, 0b010, 0b100, 0b011, 0b110, 0b111]


def test_triangle_states(triangle):
    assert len(connected_states(triangle)) == 8


@pytest.mark.parametrize("seed", range(10))
def test_state_set_matches_subset_scan(seed):
    q = random_connected_query(random.Random(seed), 6, 0.4, 1)
    want = [0] + [s for s in range(1, 64) if connected(q, s)]
    assert sorted(connected_states(q)) == want


def test_state_limit():
    k6 = from_edges([0] * 6, [(a, b) for a in range(6) for b in range(a + 1, 6)])
    with pytest.raises(CcgTooLarge):
        connected_states(k6, limit=20)
    assert count_states(k6, 20) is None
    assert count_states(k6, 100) == 64


@pytest.mark.parametrize("seed", range(12))
def test_full_ccg_structure_and_values(seed):
    g, q, ctx = small_instance(seed)
    ccg = exact_min_costs(build_full_ccg(g, q, ctx))
    assert ccg.states[0].cardinality == 1 and ccg.states[0].min_cost == 0
    for (src, add), rec in ccg.transitions.items():
        assert not src >> add & 1 and src in ccg.states and src | 1 << add in ccg.states
        assert not rec.truncated
    full = ccg.goal
    assert ccg.states[full].cardinality == enumerate_matches(g, q, ctx, bfs_order(q, full)).match_count
    # min cost equals an independent Dijkstra run over the same lattice
    edges = {(s, s | 1 << u): r.cost for (s, u), r in ccg.transitions.items()}
    dist = dijkstra(len(ccg.states), edges)
    for s, rec in ccg.states.items():
        assert rec.min_cost == dist[s]
        ins = [dist[a] + r.cost for a, r in ccg.in_transitions(s)]
        if s:
            assert rec.min_cost == min(ins)
    assert ccg.path_cost(bfs_order(q, full)) == enumerate_matches(g, q, ctx, bfs_order(q, full)).probe_count


def test_unit_costs_give_sizes():
    q = random_connected_query(random.Random(3), 5, 0.5, 1)
    ccg = Ccg(5)
    for s in connected_states(q):
        ccg.states[s] = StateRecord(cardinality=1, explored=Exploration.FULL)
        for u in range(5):
            t = s | 1 << u
            if not s >> u & 1 and connected(q, t):
                ccg.transitions[(s, u)] = TransitionRecord(1)
    exact_min_costs(ccg)
    for s, rec in ccg.states.items():
        assert rec.min_cost == popcount(s)


def test_chain_running_sum():
    ccg = Ccg(3)
    for s in (0, 0b1, 0b11, 0b111):
        ccg.states[s] = StateRecord(cardinality=1)
    ccg.transitions = {(0, 0): TransitionRecord(4), (0b1, 1): TransitionRecord(7),
                       (0b11, 2): TransitionRecord(2)}
    exact_min_costs(ccg)
    assert [ccg.states[s].min_cost for s in (0, 1, 3, 7)] == [0, 4, 11, 13]


def test_truncated_transitions_are_unreachable():
    ccg = Ccg(2)
    for s in (0, 1, 3):
        ccg.states[s] = StateRecord(cardinality=1)
    ccg.transitions = {(0, 0): TransitionRecord(4), (1, 1): TransitionRecord(9, truncated=True)}
    exact_min_costs(ccg)
    assert ccg.states[3].min_cost is None and 3 in ccg.unreachable
    assert ccg.cost(1, 1) is None


def test_budget_truncation_drops_values():
    g, q, ctx = small_instance(2)
    ccg = build_full_ccg(g, q, ctx, ExecutionBudget(max_probes=5))
    assert any(r.truncated for r in ccg.transitions.values()) or q.vertex_count == 1


def test_partial_on_chain(path3):
    g = from_edges([0] * 6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])
    ctx = build_candidates(g, path3)
    samples = collect_partial(g, path3, ctx, [0, 1, 2])
    assert [s.state for s in samples] == [0, 0b001, 0b011, 0b111]
    assert all(s.exploration is Exploration.PARTIAL and s.min_cost is None for s in samples)


def test_partial_zero_match_prefix():
    g = from_edges([0, 0, 1], [(0, 1)])
    q = from_edges([0, 1, 0], [(0, 1), (1, 2)])
    ctx = build_candidates(g, q)
    samples = collect_partial(g, q, ctx, [1, 0, 2])
    for s in samples:
        if popcount(s.state) >= 2:
            assert all(c == 0 for _, c in s.in_transitions)


@pytest.mark.parametrize("seed", range(8))
def test_partial_subset_of_full(seed):
    g, q, ctx = small_instance(seed)
    ccg = exact_min_costs(build_full_ccg(g, q, ctx))
    full = {s.state: s for s in samples_from_ccg(ccg, "x")}
    part = collect_partial(g, q, ctx, bfs_order(q, ccg.goal), query_id="x")
    for s in part:
        f = full[s.state]
        assert s.cardinality == f.cardinality
        assert set(s.in_transitions) <= set(f.in_transitions)


def test_export_schema_and_round_trip():
    assert export_samples([]) == ""
    one = TrainingSample("q1", 3, Exploration.FULL, 10, [(1, 5), (2, 6)], 11)
    line = export_samples([one])
    assert line.count("\n") == 1 and '"exploration":"Full"' in line and '"min_cost":11' in line
    assert list(json.loads(line)) == ["query_id", "state", "exploration", "cardinality",
                                      "min_cost", "in_transitions"]
    rng = random.Random(0)
    many = []
    for i in range(1000):
        many.append(TrainingSample(
            f"q{i % 7}", rng.getrandbits(64), rng.choice(list(Exploration)[:2]),
            rng.choice([None, rng.randrange(10**9)]),
            [(rng.getrandbits(64), rng.randrange(10**12)) for _ in range(rng.randrange(4))],
            rng.choice([None, rng.randrange(10**12)])))
    text = export_samples(many)
    assert load_samples(text) == many
    assert export_samples(load_samples(text)) == text

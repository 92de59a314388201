import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from neuso.graph import (GraphFormatError, bfs_order, connected, dump_graph, from_edges,
                         load_graph, members, popcount, triangles, validate_order, vset)
from oracles import random_graph, union_find_connected


def test_load_triangle():
    g = load_graph("t 3 3\nv 0 0 2\nv 1 0 2\nv 2 1 2\ne 0 1\ne 1 2\ne 0 2\n")
    assert g.labels == (0, 0, 1)
    assert g.edge_count == 3
    assert g.adjacency == ((1, 2), (0, 2), (0, 1))


def test_single_isolated_vertex():
    g = load_graph(b"t 1 0\nv 0 5 0\n")
    assert g.vertex_count == 1 and g.edge_count == 0 and g.labels == (5,)
    assert g.label_alphabet_size == 6


def test_header_counts_large():
    n, m = 3112, 12519
    rng = random.Random(0)
    edges = set()
    while len(edges) < m:
        a, b = rng.randrange(n), rng.randrange(n)
        if a != b:
            edges.add((min(a, b), max(a, b)))
    g = from_edges([0] * n, sorted(edges))
    h = load_graph(dump_graph(g))
    assert (h.vertex_count, h.edge_count) == (3112, 12519)


@pytest.mark.parametrize("text, line", [
    ("v 0 0 0\n", 1),
    ("t 2 1\nv 0 0 1\nv 1 0 1\ne 0 0\n", 4),
    ("t 2 2\nv 0 0 1\nv 1 0 1\ne 0 1\ne 1 0\n", 5),
    ("t 2 1\nv 0 0 1\nv 2 0 1\ne 0 1\n", 3),
    ("t 2 1\nv 0 0 1\nv 1 0 1\ne 0 5\n", 4),
    ("t 2 1\nv 0 0 1\nv 1 0 1\nx 0 1\n", 4),
    ("t 2 1\nv 0 0 1\nv 1 0 a\n", 3),
    ("t 2 2\nv 0 0 1\nv 1 0 1\ne 0 1\n", 4),
    ("t 2 1\nv 0 0 2\nv 1 0 1\ne 0 1\n", 4),
    ("t 3 0\nv 0 0 0\n", 2),
])
def test_malformed_inputs_name_line(text, line):
    with pytest.raises(GraphFormatError) as err:
        load_graph(text)
    assert err.value.lineno == line
    assert f"line {line}" in str(err.value)


def test_label_outside_alphabet():
    with pytest.raises(GraphFormatError):
        load_graph("t 1 0\nv 0 3 0\n", label_alphabet_size=2)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.floats(0, 1), st.integers(1, 4), st.integers(0, 10**6))
def test_round_trip(n, p, labels, seed):
    g = random_graph(random.Random(seed), n, p, labels)
    h = load_graph(dump_graph(g), g.label_alphabet_size)
    assert h == g
    assert dump_graph(h) == dump_graph(g)


def test_invariants_of_built_graphs():
    g = random_graph(random.Random(3), 30, 0.2, 3)
    for u, adj in enumerate(g.adjacency):
        assert list(adj) == sorted(set(adj)) and u not in adj
        for v in adj:
            assert u in g.adjacency[v]
    assert g.edge_count == sum(map(len, g.adjacency)) // 2


def test_from_edges_rejects_bad_input():
    with pytest.raises(ValueError):
        from_edges([0, 0], [(0, 0)])
    with pytest.raises(ValueError):
        from_edges([0, 0], [(0, 1), (1, 0)])
    with pytest.raises(ValueError):
        from_edges([0, 0], [(0, 2)])


def test_connected_on_path(path3):
    assert not connected(path3, vset([0, 2]))
    assert connected(path3, vset([0, 1, 2]))
    assert connected(path3, 0)
    with pytest.raises(ValueError):
        connected(path3, 1 << 3)


@pytest.mark.parametrize("seed", range(8))
def test_connected_matches_union_find(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 8)
    q = random_graph(rng, n, rng.random(), 2)
    for bits in range(1 << n):
        assert connected(q, bits) == union_find_connected(q, members(bits))


def test_validate_order(path3):
    assert validate_order(path3, [0, 1, 2])
    assert not validate_order(path3, [0, 2, 1])
    assert not validate_order(path3, [0, 1])
    assert not validate_order(path3, [0, 1, 1])
    star = from_edges([0] * 5, [(0, i) for i in range(1, 5)])
    assert validate_order(star, [1, 0, 2, 3, 4])


@pytest.mark.parametrize("seed", range(5))
def test_valid_orders_have_connected_prefixes(seed):
    rng = random.Random(seed)
    q = random_graph(rng, 6, 0.5, 1)
    for order in itertools.permutations(range(6)):
        if validate_order(q, order):
            for i in range(1, 7):
                assert connected(q, vset(order[:i]))


def test_bitmask_helpers():
    assert members(vset([5, 0, 3])) == [0, 3, 5]
    assert popcount(vset(range(64))) == 64
    with pytest.raises(ValueError):
        vset([64])


def test_bfs_order_is_valid(triangle):
    assert bfs_order(triangle, 0b111) == [0, 1, 2]
    with pytest.raises(ValueError):
        bfs_order(from_edges([0] * 3, [(0, 1)]), 0b101)


def test_triangles_against_networkx():
    import networkx as nx
    g = random_graph(random.Random(1), 25, 0.3, 1)
    h = nx.Graph(g.edges())
    assert len(triangles(g)) == sum(nx.triangles(h).values()) // 3

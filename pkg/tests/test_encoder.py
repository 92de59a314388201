import random

import numpy as np
import pytest

from neuso import autodiff as ad
from neuso.encoder import (EncoderConfig, QueryStructure, build_label_embeddings,
                           init_encoder_params, init_features, pool, triat_forward)
from neuso.graph import from_edges, triangles
from neuso.matcher import CandidateContext, build_candidates
from oracles import (cycle, disjoint_cycles, multiset_distance, random_connected_query,
                     random_graph, wl_equivalent)

SMALL = EncoderConfig(d_label=7, layer_dims=(8, 8), heads=2, att_dim=4)


def uniform_ctx(q, size=5, edges=7):
    cands = [np.arange(size, dtype=np.int64) for _ in range(q.vertex_count)]
    return CandidateContext(cands, {e: edges for e in q.edges()})


def encode(q, params, cfg=SMALL, emb=None, ctx=None):
    emb = emb if emb is not None else np.eye(max(q.labels) + 1, cfg.d_label)
    ctx = ctx or uniform_ctx(q)
    tape = ad.Tape()
    with ad.recording(tape):
        p = {k: tape.leaf(v, k) for k, v in params.items()}
        x0, e0 = init_features(q, ctx, emb)
        enc = triat_forward(QueryStructure.of(q), tape.const(x0), tape.const(e0), p, cfg)
    return tape, p, enc


# -- label embeddings ---------------------------------------------------------

def test_symmetric_labels_share_rows():
    g = from_edges([0, 1, 0, 1, 0, 1], [(i, (i + 1) % 6) for i in range(6)])
    table = build_label_embeddings(g, 16)
    assert np.abs(table[0] - table[1]).max() < 1e-9


def test_single_label_table():
    g = random_graph(random.Random(0), 20, 0.2, 1)
    assert build_label_embeddings(g, 16).shape == (1, 16)


def test_distinct_labels_differ_and_deterministic():
    rng = random.Random(4)
    g = random_graph(rng, 60, 0.08, 3)
    t1 = build_label_embeddings(g, 32)
    t2 = build_label_embeddings(g, 32)
    assert np.array_equal(t1, t2)
    assert np.abs(t1[0] - t1[1]).max() > 1e-6
    assert np.all(np.isfinite(t1))


def test_sparse_path_matches_dense_path(monkeypatch):
    import neuso.encoder as enc
    g = random_graph(random.Random(5), 120, 0.05, 4)
    dense = build_label_embeddings(g, 12)
    monkeypatch.setattr(enc, "_DENSE_LIMIT", 10)
    sparse = build_label_embeddings(g, 12)
    assert np.allclose(dense, sparse, atol=1e-6)


def test_label_embedding_rejects_bad_dim():
    with pytest.raises(ValueError):
        build_label_embeddings(from_edges([0], []), 0)


# -- features -------------------------------------------------------------------

def test_initial_features():
    q = from_edges([0, 0, 1], [(0, 1), (1, 2)])
    ctx = CandidateContext([np.array([1, 2, 3]), np.array([4, 5, 6]), np.array([], dtype=np.int64)],
                           {(0, 1): 4, (1, 2): 0})
    emb = np.arange(2 * 127, dtype=float).reshape(2, 127)
    x, e = init_features(q, ctx, emb)
    assert x.shape == (3, 128) and e.shape == (4, 2 * 128 + 1)
    assert x[2, -1] == 0.0 and x[0, -1] == pytest.approx(np.log(4))
    assert np.array_equal(x[0], x[1])
    assert e[0, -1] == pytest.approx(np.log(5))
    assert np.array_equal(e[0, :128], x[0]) and np.array_equal(e[0, 128:256], x[1])


# -- layers ---------------------------------------------------------------------

def test_isolated_vertex_is_self_projection_only():
    q = from_edges([0], [])
    params = init_encoder_params(SMALL, np.random.default_rng(0))
    _, _, enc = encode(q, params)
    x = init_features(q, uniform_ctx(q), np.eye(1, 7))[0]
    for k, width in enumerate(SMALL.layer_dims):
        heads = [np.maximum(x @ params[f"enc.{k}.{h}.self"], 0) for h in range(SMALL.heads)]
        x = np.concatenate(heads, axis=1)
    assert np.allclose(enc.vertex_embeddings.value, x)
    assert enc.attention_evals == [0, 0]


def test_triangle_index():
    q = from_edges([0] * 4, [(0, 1), (1, 2), (0, 2), (2, 3)])
    st = QueryStructure.of(q)
    idx = st.triangle_index()
    edge_ids = {e: i for i, e in enumerate(q.edges())}
    assert idx[0] == [edge_ids[(1, 2)]] and idx[1] == [edge_ids[(0, 2)]]
    assert idx[2] == [edge_ids[(0, 1)]] and idx[3] == []


@pytest.mark.parametrize("seed", range(20))
def test_attention_eval_bound(seed):
    rng = random.Random(seed)
    q = random_connected_query(rng, rng.randint(2, 10), rng.uniform(0.3, 1.0), 2)
    params = init_encoder_params(SMALL, np.random.default_rng(seed))
    _, _, enc = encode(q, params)
    n_tri = len(triangles(q))
    for evals in enc.attention_evals:
        assert evals == 2 * q.edge_count + 3 * n_tri
        assert evals <= 2 * q.edge_count + 6 * n_tri


def test_permutation_equivariance():
    rng = random.Random(2)
    q = random_connected_query(rng, 7, 0.5, 3)
    perm = list(range(7))
    rng.shuffle(perm)
    inv = {p: i for i, p in enumerate(perm)}
    qp = from_edges([q.labels[perm[i]] for i in range(7)],
                    [(inv[a], inv[b]) for a, b in q.edges()], q.label_alphabet_size)
    params = init_encoder_params(SMALL, np.random.default_rng(3))
    emb = np.random.default_rng(4).normal(size=(3, 7))
    _, _, e1 = encode(q, params, emb=emb)
    _, _, e2 = encode(qp, params, emb=emb)
    assert np.allclose(e1.vertex_embeddings.value[perm], e2.vertex_embeddings.value, atol=1e-12)


# -- pooling --------------------------------------------------------------------

def test_pool_single_vertex_formula():
    q = random_connected_query(random.Random(1), 5, 0.6, 2)
    params = init_encoder_params(SMALL, np.random.default_rng(1))
    tape, p, enc = encode(q, params)
    with ad.recording(tape):
        xq = pool(enc, [1 << 2], p, SMALL).value[0]
    x = enc.vertex_embeddings.value[2]
    alpha = (x @ params["pool.k1"]) @ (x @ params["pool.k2"])
    assert np.allclose(xq, alpha * x)


def test_pool_zero_matrices_give_zero():
    q = random_connected_query(random.Random(1), 5, 0.6, 2)
    params = init_encoder_params(SMALL, np.random.default_rng(1))
    params["pool.k1"][:] = 0
    params["pool.k2"][:] = 0
    tape, p, enc = encode(q, params)
    with ad.recording(tape):
        assert np.all(pool(enc, [1, 3, 31], p, SMALL).value == 0)


def test_pool_rejects_empty_state():
    q = from_edges([0, 0], [(0, 1)])
    params = init_encoder_params(SMALL, np.random.default_rng(1))
    tape, p, enc = encode(q, params)
    with ad.recording(tape), pytest.raises(ValueError):
        pool(enc, [0], p, SMALL)


def test_pool_permutation_invariance():
    rng = random.Random(6)
    q = random_connected_query(rng, 6, 0.5, 2)
    perm = list(range(6))
    rng.shuffle(perm)
    inv = {p: i for i, p in enumerate(perm)}
    qp = from_edges([q.labels[perm[i]] for i in range(6)],
                    [(inv[a], inv[b]) for a, b in q.edges()], q.label_alphabet_size)
    params = init_encoder_params(SMALL, np.random.default_rng(8))
    for softmax in (False, True):
        cfg = EncoderConfig(**{**SMALL.__dict__, "pool_softmax": softmax})
        t1, p1, e1 = encode(q, params, cfg)
        t2, p2, e2 = encode(qp, params, cfg)
        s = 0b001011
        sp = sum(1 << inv[u] for u in range(6) if s >> u & 1)
        with ad.recording(t1):
            a = pool(e1, [s], p1, cfg).value
        with ad.recording(t2):
            b = pool(e2, [sp], p2, cfg).value
        assert np.allclose(a, b, atol=1e-12)


# -- expressiveness -------------------------------------------------------------

def embeddings(q, seed, use_triangles=True):
    cfg = EncoderConfig(**{**SMALL.__dict__, "use_triangles": use_triangles})
    params = init_encoder_params(cfg, np.random.default_rng(seed))
    return encode(q, params, cfg)[2].vertex_embeddings.value


def test_triangle_pair_is_separated_only_with_triangles():
    c6, two_c3 = cycle(6), disjoint_cycles(2, 3)
    assert wl_equivalent(c6, two_c3)
    for seed in range(5):
        assert multiset_distance(embeddings(c6, seed), embeddings(two_c3, seed)) > 1e-6
        assert multiset_distance(embeddings(c6, seed, False),
                                 embeddings(two_c3, seed, False)) < 1e-9


def test_two_squares_vs_octagon_not_separated():
    a, b = disjoint_cycles(2, 4), cycle(8)
    for seed in range(5):
        assert multiset_distance(embeddings(a, seed), embeddings(b, seed)) < 1e-9


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(layer_dims=(10,), heads=4)

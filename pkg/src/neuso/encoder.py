"""Query-graph encoder: label embeddings, initial features, triangle-aware
attention layers and attention pooling into (sub)query vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from . import autodiff as ad
from .graph import LabeledGraph, members
from .matcher import CandidateContext

_DENSE_LIMIT = 1500


@dataclass(frozen=True)
class EncoderConfig:
    d_label: int = 127
    layer_dims: tuple[int, ...] = (64, 64)
    heads: int = 4
    att_dim: int = 16
    negative_slope: float = 0.2
    use_triangles: bool = True
    pool_softmax: bool = False

    @property
    def d_input(self) -> int:
        return self.d_label + 1

    @property
    def d_edge_input(self) -> int:
        return 2 * self.d_input + 1

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def __post_init__(self):
        for d in self.layer_dims:
            if d % self.heads:
                raise ValueError(f"layer width {d} not divisible by {self.heads} heads")


# -- label embeddings ----------------------------------------------------------

def build_label_embeddings(g: LabeledGraph, d_label: int = 127) -> np.ndarray:
    """One row per label, from the spectrum of the label-augmented graph.

    The augmented graph adds a vertex per label joined to every data vertex
    carrying it.  Column j holds, for eigenvalue j of the normalized adjacency
    (largest first), the norm of the label vertex's projection onto that
    eigenvalue's eigenspace.  This depends only on the graph, so labels that
    an automorphism exchanges get identical rows.  Rows are rescaled so the
    mean row norm is 1.
    """
    if d_label < 1:
        raise ValueError("d_label must be positive")
    n, sigma = g.vertex_count, g.label_alphabet_size
    total = n + sigma
    rows, cols = [], []
    for u, v in g.edges():
        rows += [u, v]
        cols += [v, u]
    for u, lab in enumerate(g.labels):
        rows += [u, n + lab]
        cols += [n + lab, u]
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(total, total))
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    inv[deg > 0] = deg[deg > 0] ** -0.5
    norm = sp.diags(inv) @ a @ sp.diags(inv)
    want = min(d_label + 8, total)
    if total <= _DENSE_LIMIT or want >= total - 1:
        vals, vecs = np.linalg.eigh(norm.toarray())
        vals, vecs = vals[::-1][:want], vecs[:, ::-1][:, :want]
    else:
        vals, vecs = eigsh(norm, k=want, which="LA", v0=np.ones(total), tol=1e-12)
        order = np.argsort(-vals, kind="stable")
        vals, vecs = vals[order], vecs[:, order]
    label_rows = vecs[n:, :] ** 2
    table = np.zeros((sigma, d_label))
    tol = 1e-8
    start = 0
    while start < len(vals):
        stop = start + 1
        while stop < len(vals) and abs(vals[stop] - vals[start]) < tol:
            stop += 1
        block = np.sqrt(label_rows[:, start:stop].sum(axis=1))
        for j in range(start, min(stop, d_label)):
            table[:, j] = block
        start = stop
    scale = np.linalg.norm(table, axis=1).mean()
    if scale > 0:
        table /= scale
    return np.round(table, 12)


def init_features(q: LabeledGraph, ctx: CandidateContext, emb: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Vertex features (label row ++ log1p|C(u)|) and directed-edge features
    (x_u ++ x_v ++ log1p|C(u,v)|) ordered like :class:`QueryStructure`."""
    st = QueryStructure.of(q)
    counts = np.log1p(np.array([ctx.size(u) for u in range(q.vertex_count)], dtype=np.float64))
    x = np.concatenate([emb[list(q.labels)], counts[:, None]], axis=1)
    ec = np.array([np.log1p(ctx.edge_count(int(a), int(b))) for a, b in zip(st.src, st.dst)])
    e = np.concatenate([x[st.src], x[st.dst], ec.reshape(-1, 1)], axis=1) if len(ec) else \
        np.zeros((0, 2 * x.shape[1] + 1))
    return x, e


# -- structure -----------------------------------------------------------------

@dataclass
class QueryStructure:
    """Index arrays the attention layers need.

    Directed edges are listed by (src, dst) ascending; ``und`` holds each
    undirected edge's two directed indices; ``tri_u``/``tri_e`` pair every
    vertex with the undirected edges joining two of its neighbors.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    und: np.ndarray
    tri_u: np.ndarray
    tri_e: np.ndarray

    @classmethod
    def of(cls, q: LabeledGraph) -> QueryStructure:
        src, dst = [], []
        index = {}
        for u in range(q.vertex_count):
            for v in q.adjacency[u]:
                index[(u, v)] = len(src)
                src.append(u)
                dst.append(v)
        und = [(index[(a, b)], index[(b, a)]) for a, b in q.edges()]
        und_id = {e: i for i, e in enumerate(q.edges())}
        tri_u, tri_e = [], []
        for u in range(q.vertex_count):
            nbrs = q.adjacency[u]
            for i, a in enumerate(nbrs):
                for b in nbrs[i + 1:]:
                    if q.has_edge(a, b):
                        tri_u.append(u)
                        tri_e.append(und_id[(a, b)])
        as_arr = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
        return cls(q.vertex_count, as_arr(src), as_arr(dst),
                   np.asarray(und, dtype=np.int64).reshape(-1, 2), as_arr(tri_u), as_arr(tri_e))

    def triangle_index(self) -> list[list[int]]:
        """Per vertex, the undirected-edge ids between pairs of its neighbors."""
        out: list[list[int]] = [[] for _ in range(self.n)]
        for u, e in zip(self.tri_u, self.tri_e):
            out[int(u)].append(int(e))
        return out


# -- parameters ----------------------------------------------------------------

def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    d_in, e_in = cfg.d_input, cfg.d_edge_input
    for k, width in enumerate(cfg.layer_dims):
        dh = width // cfg.heads
        for h in range(cfg.heads):
            p = f"enc.{k}.{h}."
            params[p + "theta"] = ad.glorot(rng, d_in, dh)
            params[p + "psi"] = ad.glorot(rng, e_in, dh)
            params[p + "w1"] = ad.glorot(rng, d_in, cfg.att_dim)
            params[p + "w2"] = ad.glorot(rng, e_in, cfg.att_dim)
            params[p + "a"] = ad.glorot(rng, 2 * cfg.att_dim, 1, (2 * cfg.att_dim,))
            params[p + "b"] = ad.glorot(rng, 2 * cfg.att_dim, 1, (2 * cfg.att_dim,))
            params[p + "self"] = ad.glorot(rng, d_in, dh)
        if k + 1 < len(cfg.layer_dims):
            params[f"enc.{k}.edge"] = ad.glorot(rng, 2 * width, width)
        d_in, e_in = width, width
    m = cfg.out_dim
    params["pool.k1"] = ad.glorot(rng, m, m)
    params["pool.k2"] = ad.glorot(rng, m, m)
    return params


# -- forward -------------------------------------------------------------------

@dataclass
class EncodedQuery:
    vertex_embeddings: ad.Node
    structure: QueryStructure
    attention_evals: list[int] = field(default_factory=list)

    @property
    def triangle_index(self) -> list[list[int]]:
        return self.structure.triangle_index()


def triat_forward(st: QueryStructure, x0: ad.Node, e0: ad.Node, p: dict[str, ad.Node],
                  cfg: EncoderConfig) -> EncodedQuery:
    """Apply the attention layers; must run inside ``ad.recording``.

    ``attention_evals[k]`` counts the attention scores one head of layer k
    evaluates (one per directed edge plus one per vertex/neighbor-pair edge).
    """
    x, e = x0, e0
    n = st.n
    has_edges = len(st.src) > 0
    has_tri = cfg.use_triangles and len(st.tri_u) > 0
    evals = []
    slope = cfg.negative_slope
    for k, width in enumerate(cfg.layer_dims):
        if has_tri:
            e_und = ad.scale(ad.add(ad.gather(e, st.und[:, 0]), ad.gather(e, st.und[:, 1])), 0.5)
        outs = []
        for h in range(cfg.heads):
            pre = f"enc.{k}.{h}."
            parts = [ad.matmul(x, p[pre + "self"])]
            hu = ad.matmul(x, p[pre + "w1"])
            att = cfg.att_dim
            if has_edges:
                a = p[pre + "a"]
                a_self, a_edge = _split(a, att)
                he = ad.matmul(e, p[pre + "w2"])
                score = ad.leaky_relu(_flat(ad.add(ad.gather(ad.matmul(hu, a_self), st.src),
                                                   ad.matmul(he, a_edge))), slope)
                alpha = ad.segment_softmax(score, st.src, n)
                msg = ad.matmul(ad.gather(x, st.dst), p[pre + "theta"])
                parts.append(ad.segment_sum(ad.mul(msg, _col(alpha)), st.src, n))
            if has_tri:
                b = p[pre + "b"]
                b_self, b_edge = _split(b, att)
                hn = ad.matmul(e_und, p[pre + "w2"])
                score = ad.leaky_relu(_flat(ad.add(ad.gather(ad.matmul(hu, b_self), st.tri_u),
                                                   ad.gather(ad.matmul(hn, b_edge), st.tri_e))),
                                      slope)
                beta = ad.segment_softmax(score, st.tri_u, n)
                msg = ad.gather(ad.matmul(e_und, p[pre + "psi"]), st.tri_e)
                parts.append(ad.segment_sum(ad.mul(msg, _col(beta)), st.tri_u, n))
            acc = parts[0]
            for extra in parts[1:]:
                acc = ad.add(acc, extra)
            outs.append(ad.relu(acc))
        evals.append(len(st.src) + (len(st.tri_u) if has_tri else 0))
        x = ad.concat(outs, axis=1) if len(outs) > 1 else outs[0]
        if k + 1 < len(cfg.layer_dims) and has_edges:
            pair = ad.concat([ad.gather(x, st.src), ad.gather(x, st.dst)], axis=1)
            e = ad.matmul(pair, p[f"enc.{k}.edge"])
    return EncodedQuery(x, st, evals)


def _split(vec: ad.Node, at: int) -> tuple[ad.Node, ad.Node]:
    """Split an attention vector into (self part, edge part) column vectors."""
    tape = ad._tape()
    first = tape.op(vec.value[:at].reshape(-1, 1), (vec,),
                    lambda g: (np.concatenate([g.ravel(), np.zeros(len(vec.value) - at)]),))
    second = tape.op(vec.value[at:].reshape(-1, 1), (vec,),
                     lambda g: (np.concatenate([np.zeros(at), g.ravel()]),))
    return first, second


def _col(v: ad.Node) -> ad.Node:
    """(n, 1) view of an (n,) or (n, 1) node."""
    if v.value.ndim == 2:
        return v
    return ad._tape().op(v.value.reshape(-1, 1), (v,), lambda g: (g.reshape(-1),))


def _flat(v: ad.Node) -> ad.Node:
    return ad._tape().op(v.value.reshape(-1), (v,), lambda g: (g.reshape(v.value.shape),))


def membership(states: list[int], n: int) -> np.ndarray:
    s = np.zeros((len(states), n))
    for i, bits in enumerate(states):
        s[i, members(bits)] = 1.0
    return s


def pool(enc: EncodedQuery, states: list[int], p: dict[str, ad.Node],
         cfg: EncoderConfig) -> ad.Node:
    """Attention-weighted sums of vertex embeddings, one row per state.

    The weight of vertex u is (K1 x_u) . (K2 x_u), used raw unless
    ``cfg.pool_softmax`` normalizes it within each state.
    """
    if any(s == 0 for s in states):
        raise ValueError("cannot pool the empty state")
    x = enc.vertex_embeddings
    alpha = ad.dot(ad.matmul(x, p["pool.k1"]), ad.matmul(x, p["pool.k2"]))
    if not cfg.pool_softmax:
        weighted = ad.mul(x, _col(alpha))
        return ad.matmul(ad._tape().const(membership(states, enc.structure.n)), weighted)
    seg, vert = [], []
    for i, bits in enumerate(states):
        for u in members(bits):
            seg.append(i)
            vert.append(u)
    w = ad.segment_softmax(ad.gather(alpha, np.asarray(vert)), np.asarray(seg), len(states))
    rows = ad.mul(ad.gather(x, np.asarray(vert)), _col(w))
    return ad.segment_sum(rows, np.asarray(seg), len(states))

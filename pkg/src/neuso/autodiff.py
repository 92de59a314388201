"""Reverse-mode automatic differentiation over float64 numpy arrays, the
AdamW update rule, parameter initialization and checkpoint I/O."""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

CHECKPOINT_SCHEMA = 1


class NonFiniteError(FloatingPointError):
    pass


class Node:
    __slots__ = ("value", "parents", "backward", "name", "index")

    def __init__(self, value: np.ndarray, parents: tuple = (), backward=None, name=None):
        self.value = value
        self.parents = parents
        self.backward = backward
        self.name = name
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.name or '?'}, shape={self.value.shape})"


class Tape:
    """Ordered record of the operations of one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: dict[str, Node] = {}

    def _push(self, node: Node) -> Node:
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def leaf(self, value, name: str) -> Node:
        """A named input whose gradient is reported by :func:`backward`."""
        if name in self.leaves:
            return self.leaves[name]
        node = self._push(Node(np.asarray(value, dtype=np.float64), name=name))
        self.leaves[name] = node
        return node

    def const(self, value) -> Node:
        return self._push(Node(np.asarray(value, dtype=np.float64)))

    def op(self, value: np.ndarray, parents: tuple, backward: Callable) -> Node:
        if not np.all(np.isfinite(value)):
            raise NonFiniteError("non-finite value produced on the tape")
        return self._push(Node(value, parents, backward))


class Gradients(dict):
    """Leaf name -> gradient; ``reached`` holds the leaves the loss depends on."""

    reached: set


def backward(tape: Tape, loss: Node) -> Gradients:
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    adj: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = adj.pop(node.index, None) if node.name is None else adj.get(node.index)
        if g is None or node.backward is None:
            continue
        grads = node.backward(g)
        for parent, pg in zip(node.parents, grads):
            if pg is None:
                continue
            prev = adj.get(parent.index)
            adj[parent.index] = pg if prev is None else prev + pg
    out = Gradients()
    out.reached = set()
    for name, node in tape.leaves.items():
        g = adj.get(node.index)
        if g is None:
            out[name] = np.zeros_like(node.value)
        else:
            out[name] = np.broadcast_to(g, node.value.shape).copy()
            out.reached.add(name)
    return out


# -- primitives --------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


_local = threading.local()


def _tape() -> Tape:
    stack = getattr(_local, "stack", None)
    if not stack:
        raise RuntimeError("no active tape; wrap the computation in recording(tape)")
    return stack[-1]


class recording:
    """Context manager making ``tape`` the target of the primitive ops."""

    def __init__(self, tape: Tape):
        self.tape = tape

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self.tape)
        return self.tape

    def __exit__(self, *exc):
        _local.stack.pop()


def add(a: Node, b: Node) -> Node:
    sa, sb = a.shape, b.shape
    return _tape().op(a.value + b.value, (a, b),
                      lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Node, b: Node) -> Node:
    sa, sb = a.shape, b.shape
    return _tape().op(a.value - b.value, (a, b),
                      lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    return _tape().op(av * bv, (a, b),
                      lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(a: Node, c: float) -> Node:
    return _tape().op(a.value * c, (a,), lambda g: (g * c,))


def matmul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    return _tape().op(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def concat(xs: Sequence[Node], axis: int = -1) -> Node:
    vals = [x.value for x in xs]
    axis = axis % vals[0].ndim
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _tape().op(np.concatenate(vals, axis=axis), tuple(xs), bw)


def sum(a: Node, axis: int | None = None) -> Node:  # noqa: A001
    shape = a.shape
    if axis is None:
        return _tape().op(np.asarray(a.value.sum()), (a,),
                          lambda g: (np.broadcast_to(g, shape).copy(),))
    return _tape().op(a.value.sum(axis=axis), (a,),
                      lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def sum_rows(a: Node) -> Node:
    """Sum over the first axis."""
    return sum(a, axis=0)


def mean(a: Node) -> Node:
    return scale(sum(a), 1.0 / max(a.value.size, 1))


def dot(a: Node, b: Node) -> Node:
    """Row-wise inner product along the last axis."""
    return sum(mul(a, b), axis=-1)


def relu(a: Node) -> Node:
    mask = a.value > 0
    return _tape().op(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a: Node, slope: float = 0.2) -> Node:
    factor = np.where(a.value > 0, 1.0, slope)
    return _tape().op(a.value * factor, (a,), lambda g: (g * factor,))


def exp(a: Node) -> Node:
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _tape().op(out, (a,), lambda g: (g * out,))


def log(a: Node) -> Node:
    av = a.value
    if np.any(av <= 0):
        raise NonFiniteError("log of non-positive value")
    return _tape().op(np.log(av), (a,), lambda g: (g / av,))


def square(a: Node) -> Node:
    av = a.value
    return _tape().op(av * av, (a,), lambda g: (2.0 * g * av,))


def gather(a: Node, idx: np.ndarray) -> Node:
    """Rows ``a[idx]``."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _tape().op(a.value[idx], (a,), bw)


def segment_sum(a: Node, seg: np.ndarray, n: int) -> Node:
    """out[i] = sum of rows a[j] with seg[j] == i."""
    seg = np.asarray(seg, dtype=np.int64)
    out = np.zeros((n,) + a.shape[1:])
    np.add.at(out, seg, a.value)
    return _tape().op(out, (a,), lambda g: (g[seg],))


def segment_softmax(scores: Node, seg: np.ndarray, n: int) -> Node:
    """Softmax of a score vector within each index group."""
    seg = np.asarray(seg, dtype=np.int64)
    s = scores.value
    gmax = np.full(n, -np.inf)
    np.maximum.at(gmax, seg, s)
    e = np.exp(s - gmax[seg])
    denom = np.zeros(n)
    np.add.at(denom, seg, e)
    y = e / denom[seg]

    def bw(g):
        gy = np.zeros(n)
        np.add.at(gy, seg, g * y)
        return (y * (g - gy[seg]),)

    return _tape().op(y, (scores,), bw)


def segment_min(a: Node, seg: np.ndarray, n: int) -> Node:
    """Minimum of a vector within each group; the gradient goes to the first
    minimizing entry.  Empty groups yield +0 and receive no gradient."""
    seg = np.asarray(seg, dtype=np.int64)
    av = a.value
    out = np.full(n, np.inf)
    np.minimum.at(out, seg, av)
    arg = np.full(n, -1, dtype=np.int64)
    for j in range(len(av) - 1, -1, -1):
        if av[j] == out[seg[j]]:
            arg[seg[j]] = j
    out[arg < 0] = 0.0

    def bw(g):
        ga = np.zeros_like(av)
        ok = arg >= 0
        np.add.at(ga, arg[ok], g[ok])
        return (ga,)

    return _tape().op(out, (a,), bw)


# -- initialization and optimizer --------------------------------------------

def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape if shape is not None else (fan_in, fan_out))


@dataclass
class AdamW:
    """Decoupled weight decay Adam; parameters are updated in place."""

    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             names: Iterable[str] | None = None) -> None:
        """Update ``params[name]`` for every name in ``names`` (default: all
        gradients given)."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name in sorted(grads if names is None else names):
            g = grads[name]
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def step_lr(base: float, epoch: int, factor: float = 0.8, period: int = 20) -> float:
    """Learning rate after ``epoch`` completed epochs of a step schedule."""
    return base * factor ** (epoch // period)


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(params: dict[str, np.ndarray], meta: dict) -> str:
    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        **meta,
        "params": {
            name: {"shape": list(arr.shape), "values": [float(x) for x in arr.ravel()]}
            for name, arr in sorted(params.items())
        },
    }
    return json.dumps(doc, sort_keys=False, separators=(",", ":")) + "\n"


def load_checkpoint(text: str) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(text)
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {doc.get('schema_version')!r}")
    params = {
        name: np.asarray(p["values"], dtype=np.float64).reshape(p["shape"])
        for name, p in doc.pop("params").items()
    }
    return params, doc

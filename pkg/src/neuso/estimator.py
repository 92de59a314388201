"""Cardinality, transition-cost and minimum-cost heads on top of the encoder,
the traditional candidate-ratio cost model, the losses and the multi-task
training loop."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .ccg import Exploration, TrainingSample
from .encoder import (EncodedQuery, EncoderConfig, QueryStructure, init_encoder_params,
                      init_features, pool, triat_forward)
from .graph import LabeledGraph, members, popcount
from .matcher import CandidateContext

HEADS = ("card", "cost", "mc")


@dataclass(frozen=True)
class LossWeights:
    card: float = 0.4
    cost: float = 0.3
    mc: float = 0.3
    constraint: float = 1.0

    def __post_init__(self):
        for name in ("card", "cost", "mc"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"loss weight {name} must lie in [0, 1]")
        if self.constraint < 0:
            raise ValueError("constraint weight must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.002
    lr_factor: float = 0.8
    lr_period: int = 20
    batch_size: int = 256
    seed: int = 7
    weight_decay: float = 0.01
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")


# -- small pure functions ------------------------------------------------------

def q_loss(pred: float, truth: float) -> float:
    """Squared difference of log(1 + .) values."""
    if pred < 0 or truth < 0:
        raise ValueError("q_loss needs non-negative inputs")
    return (math.log1p(pred) - math.log1p(truth)) ** 2


def from_log(out: float) -> float:
    """Head output (log space) to a non-negative prediction."""
    if not math.isfinite(out):
        raise ad.NonFiniteError("non-finite head output")
    return max(math.expm1(out), 0.0)


def constraint_loss(step_costs_log: Sequence[float], min_cost_log: float) -> float:
    """max(0, min step cost - min cost)^2 on log-space values; 0 with no steps."""
    if not step_costs_log:
        return 0.0
    return max(0.0, min(step_costs_log) - min_cost_log) ** 2


def gcbo_cost(card_q1: float, q: LabeledGraph, ctx: CandidateContext, src: int, add: int) -> float:
    """Candidate-ratio transition estimate: card(q1) times the smallest
    |C(u, add)| / |C(u)| over add's neighbors u inside ``src``."""
    ratios = []
    for u in q.adjacency[add]:
        if src >> u & 1:
            size = ctx.size(u)
            ratios.append(0.0 if size == 0 else ctx.edge_count(u, add) / size)
    if not ratios:
        raise ValueError(f"vertex {add} is not adjacent to the source state")
    return card_q1 * min(ratios)


# -- model bundle --------------------------------------------------------------

@dataclass(frozen=True)
class HeadConfig:
    hidden: tuple[int, ...] = (64, 64)


def init_head_params(name: str, d_in: int, cfg: HeadConfig, rng: np.random.Generator
                     ) -> dict[str, np.ndarray]:
    out = {}
    dims = (d_in,) + cfg.hidden + (1,)
    for i in range(len(dims) - 1):
        out[f"{name}.w{i}"] = ad.glorot(rng, dims[i], dims[i + 1])
        out[f"{name}.b{i}"] = np.zeros(dims[i + 1])
    return out


def mlp(x: ad.Node, p: dict[str, ad.Node], name: str, layers: int) -> ad.Node:
    """ReLU MLP ending in a linear scalar; returns a flat vector."""
    h = x
    for i in range(layers):
        h = ad.add(ad.matmul(h, p[f"{name}.w{i}"]), p[f"{name}.b{i}"])
        if i + 1 < layers:
            h = ad.relu(h)
    return ad.sum(h, axis=1)


@dataclass
class ModelBundle:
    """All learnable parameters plus the fixed label embedding table."""

    encoder: EncoderConfig
    heads: HeadConfig
    params: dict[str, np.ndarray]
    label_embeddings: np.ndarray
    seed: int = 7
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, label_embeddings: np.ndarray, seed: int = 7,
               encoder: EncoderConfig | None = None, heads: HeadConfig | None = None
               ) -> ModelBundle:
        encoder = encoder or EncoderConfig(d_label=label_embeddings.shape[1])
        if encoder.d_label != label_embeddings.shape[1]:
            raise ValueError("label embedding width does not match encoder config")
        heads = heads or HeadConfig()
        rng = np.random.default_rng(seed)
        params = init_encoder_params(encoder, rng)
        m = encoder.out_dim
        params.update(init_head_params("card", m, heads, rng))
        params.update(init_head_params("cost", 2 * m, heads, rng))
        params.update(init_head_params("mc", m, heads, rng))
        return cls(encoder, heads, params, np.asarray(label_embeddings, dtype=np.float64), seed)

    @property
    def head_layers(self) -> int:
        return len(self.heads.hidden) + 1

    # checkpoint I/O
    def to_json(self) -> str:
        params = dict(self.params)
        params["label_embeddings"] = self.label_embeddings
        meta = {
            "seed": self.seed,
            "hyperparameters": {
                "encoder": {**asdict(self.encoder), "layer_dims": list(self.encoder.layer_dims)},
                "heads": {"hidden": list(self.heads.hidden)},
                **self.meta,
            },
        }
        return ad.save_checkpoint(params, meta)

    @classmethod
    def from_json(cls, text: str) -> ModelBundle:
        params, meta = ad.load_checkpoint(text)
        hp = dict(meta["hyperparameters"])
        enc = hp.pop("encoder")
        enc["layer_dims"] = tuple(enc["layer_dims"])
        heads = HeadConfig(tuple(hp.pop("heads")["hidden"]))
        emb = params.pop("label_embeddings")
        return cls(EncoderConfig(**enc), heads, params, emb, meta["seed"], hp)

    def copy(self) -> ModelBundle:
        return replace(self, params={k: v.copy() for k, v in self.params.items()},
                       meta=dict(self.meta))

    def head_output(self, name: str, x: np.ndarray) -> float:
        """Raw log-space output of one head on a single input vector."""
        want = (2 if name == "cost" else 1) * self.encoder.out_dim
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (want,):
            raise ValueError(f"{name} head expects a vector of width {want}, got {x.shape}")
        h = x[None, :]
        for i in range(self.head_layers):
            h = h @ self.params[f"{name}.w{i}"] + self.params[f"{name}.b{i}"]
            if i + 1 < self.head_layers:
                h = np.maximum(h, 0.0)
        return float(h[0, 0])


def predict_card(bundle: ModelBundle, x_q: np.ndarray) -> float:
    return from_log(bundle.head_output("card", x_q))


def predict_cost(bundle: ModelBundle, x_q1: np.ndarray, x_q2: np.ndarray) -> float:
    m = bundle.encoder.out_dim
    if np.shape(x_q1) != (m,) or np.shape(x_q2) != (m,):
        raise ValueError(f"both representations must have width {m}")
    return from_log(bundle.head_output("cost", np.concatenate([x_q1, x_q2])))


def predict_min_cost(bundle: ModelBundle, x_q: np.ndarray | None) -> float:
    """``None`` stands for the empty state, whose minimum cost is 0."""
    if x_q is None:
        return 0.0
    return from_log(bundle.head_output("mc", x_q))


class QueryModel:
    """One encoder pass over a query, reusable for any number of head calls.

    Must be used inside ``ad.recording(self.tape)`` when built with a tape
    shared with a loss; :meth:`for_inference` handles that itself.
    """

    def __init__(self, bundle: ModelBundle, q: LabeledGraph, ctx: CandidateContext,
                 tape: ad.Tape | None = None):
        self.bundle = bundle
        self.q = q
        self.tape = tape or ad.Tape()
        with ad.recording(self.tape):
            self.p = {k: self.tape.leaf(v, k) for k, v in bundle.params.items()}
            x0, e0 = init_features(q, ctx, bundle.label_embeddings)
            self.structure = QueryStructure.of(q)
            self.encoded: EncodedQuery = triat_forward(
                self.structure, self.tape.const(x0), self.tape.const(e0), self.p, bundle.encoder)
        self._pooled: dict[int, np.ndarray] = {}
        self.invocations = {h: 0 for h in HEADS}

    # -- differentiable building blocks (call inside recording) --
    def pooled(self, states: list[int]) -> ad.Node:
        """Rows for ``states``; the empty state maps to a zero row."""
        nonempty = sorted({s for s in states if s})
        m = self.bundle.encoder.out_dim
        if nonempty:
            rows = pool(self.encoded, nonempty, self.p, self.bundle.encoder)
            table = ad.concat([self.tape.const(np.zeros((1, m))), rows], axis=0)
        else:
            table = self.tape.const(np.zeros((1, m)))
        pos = {s: i + 1 for i, s in enumerate(nonempty)}
        pos[0] = 0
        return ad.gather(table, np.array([pos[s] for s in states], dtype=np.int64))

    def head(self, name: str, x: ad.Node) -> ad.Node:
        return mlp(x, self.p, name, self.bundle.head_layers)

    # -- inference helpers --
    def _log_outputs(self, name: str, x_states: list[int], y_states: list[int] | None = None
                     ) -> np.ndarray:
        with ad.recording(self.tape):
            x = self.pooled(x_states)
            if y_states is not None:
                x = ad.concat([x, self.pooled(y_states)], axis=1)
            out = self.head(name, x).value.copy()
        self.invocations[name] += len(x_states)
        return out

    def predict_card(self, states: list[int]) -> list[float]:
        out = self._log_outputs("card", states)
        return [from_log(float(v)) for v in out]

    def predict_cost(self, pairs: list[tuple[int, int]]) -> list[float]:
        for a, b in pairs:
            if a & ~b or popcount(b) != popcount(a) + 1:
                raise ValueError(f"{b:#x} is not a one-vertex extension of {a:#x}")
        out = self._log_outputs("cost", [a for a, _ in pairs], [b for _, b in pairs])
        return [from_log(float(v)) for v in out]

    def predict_min_cost(self, states: list[int]) -> list[float]:
        res = [0.0] * len(states)
        idx = [i for i, s in enumerate(states) if s]
        if idx:
            out = self._log_outputs("mc", [states[i] for i in idx])
            for i, v in zip(idx, out):
                res[i] = from_log(float(v))
        return res


# -- training ------------------------------------------------------------------

@dataclass
class QueryData:
    """Everything the trainer needs about one training query."""

    query_id: str
    q: LabeledGraph
    ctx: CandidateContext
    samples: list[TrainingSample]

    @property
    def exploration(self) -> Exploration:
        return self.samples[0].exploration if self.samples else Exploration.PARTIAL


@dataclass
class LossParts:
    card: float = 0.0
    cost: float = 0.0
    mc: float = 0.0
    constraint: float = 0.0


def _batched_qloss(out: ad.Node, targets: np.ndarray, batch: int) -> ad.Node:
    """Sum over batches of the mean squared log error of one head."""
    n = len(targets)
    total = None
    for lo in range(0, n, batch):
        sl = np.arange(lo, min(lo + batch, n))
        diff = ad.sub(ad.gather(out, sl), ad._tape().const(targets[sl]))
        term = ad.mean(ad.square(diff))
        total = term if total is None else ad.add(total, term)
    return total


def query_loss(bundle: ModelBundle, data: QueryData, weights: LossWeights, batch_size: int = 256
               ) -> tuple[ad.Tape, ad.Node | None, LossParts]:
    """Build the weighted multi-task loss of one query on a fresh tape.

    Returns ``(tape, loss, parts)``; ``loss`` is None when every weighted
    term is switched off or has no data.
    """
    model = QueryModel(bundle, data.q, data.ctx)
    tape = model.tape
    parts = LossParts()
    terms = []
    full = data.exploration is Exploration.FULL
    with ad.recording(tape):
        card_s = [s for s in data.samples if s.state and s.cardinality is not None]
        trans = [(a, s.state, c) for s in data.samples if s.state for a, c in s.in_transitions]
        mc_s = [s for s in data.samples if s.state and s.min_cost is not None] if full else []
        explored = sorted({b for _, b, _ in trans})

        if card_s and weights.card > 0:
            out = model.head("card", model.pooled([s.state for s in card_s]))
            y = np.log1p(np.array([s.cardinality for s in card_s], dtype=np.float64))
            loss = _batched_qloss(out, y, batch_size)
            parts.card = float(loss.value)
            terms.append(ad.scale(loss, weights.card))

        cost_out = None
        if trans and (weights.cost > 0 or weights.constraint > 0):
            x = ad.concat([model.pooled([a for a, _, _ in trans]),
                           model.pooled([b for _, b, _ in trans])], axis=1)
            cost_out = model.head("cost", x)
        if trans and weights.cost > 0:
            y = np.log1p(np.array([c for _, _, c in trans], dtype=np.float64))
            loss = _batched_qloss(cost_out, y, batch_size)
            parts.cost = float(loss.value)
            terms.append(ad.scale(loss, weights.cost))

        mc_out = None
        if (mc_s and weights.mc > 0) or (explored and weights.constraint > 0):
            mc_states = sorted({s.state for s in mc_s} | set(explored))
            mc_out = model.head("mc", model.pooled(mc_states))
            mc_pos = {s: i for i, s in enumerate(mc_states)}
        if mc_s and weights.mc > 0:
            y = np.log1p(np.array([s.min_cost for s in mc_s], dtype=np.float64))
            sel = ad.gather(mc_out, np.array([mc_pos[s.state] for s in mc_s]))
            loss = _batched_qloss(sel, y, batch_size)
            parts.mc = float(loss.value)
            terms.append(ad.scale(loss, weights.mc))

        if explored and weights.constraint > 0:
            seg_of = {s: i for i, s in enumerate(explored)}
            seg = np.array([seg_of[b] for _, b, _ in trans], dtype=np.int64)
            step_min = ad.segment_min(cost_out, seg, len(explored))
            mc_sel = ad.gather(mc_out, np.array([mc_pos[s] for s in explored]))
            gap = ad.relu(ad.sub(step_min, mc_sel))
            loss = ad.sum(ad.square(gap))
            parts.constraint = float(loss.value)
            terms.append(ad.scale(loss, weights.constraint))

        total = None
        for t in terms:
            total = t if total is None else ad.add(total, t)
    return tape, total, parts


@dataclass
class EpochLog:
    epoch: int
    card_loss: float
    cost_loss: float
    mc_loss: float
    constraint_loss: float
    lr: float

    @property
    def total(self) -> float:
        return self.card_loss + self.cost_loss + self.mc_loss + self.constraint_loss


def train(bundle: ModelBundle, dataset: Sequence[QueryData], cfg: TrainConfig = TrainConfig(),
          progress=None) -> tuple[ModelBundle, list[EpochLog]]:
    """Multi-task training, one optimizer step per query.

    The bundle is copied, never modified.  Queries are visited in a fresh
    seeded permutation every epoch; the learning rate follows a step schedule
    applied per epoch.  Logged losses are per-query means of the unweighted
    terms.
    """
    if not dataset:
        raise ValueError("empty training set")
    model = bundle.copy()
    opt = ad.AdamW(lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    log: list[EpochLog] = []
    for epoch in range(cfg.epochs):
        opt.lr = ad.step_lr(cfg.learning_rate, epoch, cfg.lr_factor, cfg.lr_period)
        sums = LossParts()
        for i in rng.permutation(len(dataset)):
            tape, loss, parts = query_loss(model, dataset[i], cfg.weights, cfg.batch_size)
            for name in ("card", "cost", "mc", "constraint"):
                setattr(sums, name, getattr(sums, name) + getattr(parts, name))
            if loss is None:
                continue
            grads = ad.backward(tape, loss)
            opt.step(model.params, grads, names=grads.reached)
        n = len(dataset)
        log.append(EpochLog(epoch, sums.card / n, sums.cost / n, sums.mc / n,
                            sums.constraint / n, opt.lr))
        if progress is not None:
            progress(log[-1])
    model.meta = {**model.meta, "train": {**asdict(cfg), "weights": asdict(cfg.weights)}}
    return model, log


def epoch_log_csv(log: Iterable[EpochLog]) -> str:
    lines = ["epoch,card_loss,cost_loss,mc_loss,constraint_loss,lr"]
    for e in log:
        lines.append(f"{e.epoch},{e.card_loss!r},{e.cost_loss!r},{e.mc_loss!r},"
                     f"{e.constraint_loss!r},{e.lr!r}")
    return "\n".join(lines) + "\n"


def group_samples(samples: Iterable[TrainingSample]) -> dict[str, list[TrainingSample]]:
    out: dict[str, list[TrainingSample]] = {}
    for s in samples:
        out.setdefault(s.query_id, []).append(s)
    return out


def dumps_config(cfg: TrainConfig) -> str:
    return json.dumps({**asdict(cfg), "weights": asdict(cfg.weights)}, sort_keys=True)

"""Command-line entry point: ``neuso <command> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from .ccg import DEFAULT_STATE_LIMIT, export_samples, load_samples
from .datagen import WorkloadQuery, WorkloadSpec, gen_data_graph, gen_queries, write_workload
from .encoder import EncoderConfig, build_label_embeddings
from .estimator import HeadConfig, LossWeights, ModelBundle, QueryModel, TrainConfig, epoch_log_csv, train
from .graph import GraphFormatError, members, read_graph, vset
from .matcher import ExecutionBudget, build_candidates, enumerate_matches
from .planner import PLANNERS, in_neighbors, make_plan

CONFIG_SCHEMA = 1
EMBEDDING_SCHEMA = 1


class CliError(Exception):
    pass


# -- config and files ---------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != CONFIG_SCHEMA:
        raise CliError(f"config schema_version must be {CONFIG_SCHEMA}")
    return doc


def resolve_seed(args, cfg: dict) -> int:
    env = os.environ.get("NEUSO_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"NEUSO_SEED must be an integer, got {env!r}") from None
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(cfg.get("seed", 7))


def positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def load_workload(workdir: Path) -> tuple:
    path = workdir / "manifest.json"
    if not path.exists():
        raise CliError(f"no manifest at {path}; run `gen` first")
    doc = json.loads(path.read_text())
    if doc.get("schema_version") != 1:
        raise CliError("unsupported manifest schema_version")
    g = read_graph(workdir / doc["graph"])
    queries = [WorkloadQuery(e["id"], read_graph(workdir / e["file"], g.label_alphabet_size),
                             tuple(e["vertices"]), e["split"]) for e in doc["queries"]]
    return g, queries


def save_embeddings(table: np.ndarray, path: Path) -> None:
    doc = {"schema_version": EMBEDDING_SCHEMA, "shape": list(table.shape),
           "values": [float(x) for x in table.ravel()]}
    path.write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load_embeddings(path: Path) -> np.ndarray:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != EMBEDDING_SCHEMA:
        raise CliError("unsupported embedding schema_version")
    return np.asarray(doc["values"], dtype=np.float64).reshape(doc["shape"])


def load_model(path: str | None) -> ModelBundle | None:
    if path is None:
        return None
    try:
        return ModelBundle.from_json(Path(path).read_text())
    except ValueError as exc:
        raise CliError(str(exc)) from None


def budget_from(args) -> ExecutionBudget:
    return ExecutionBudget(max_probes=args.max_probes, max_matches=args.max_matches,
                           max_elapsed=args.max_elapsed)


def write_or_print(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# -- commands --------------------------------------------------------------------------

def cmd_gen(args, cfg):
    seed = resolve_seed(args, cfg)
    g = gen_data_graph(args.vertices, args.avg_degree, args.labels, args.skew, seed)
    spec = WorkloadSpec(tuple(args.sizes), args.per_size, seed)
    queries = gen_queries(g, spec)
    path = write_workload(Path(args.workdir), g, queries, spec)
    print(f"wrote {len(queries)} queries and {path}")


def cmd_embed(args, cfg):
    g, _ = load_workload(Path(args.workdir))
    table = build_label_embeddings(g, args.dim)
    save_embeddings(table, Path(args.out or Path(args.workdir) / "embeddings.json"))


def cmd_collect(args, cfg):
    workdir = Path(args.workdir)
    g, queries = load_workload(workdir)
    chosen = [q for q in queries if args.split in ("all", q.split)]
    samples = bench.collect_workload(g, chosen, budget_from(args), args.state_limit)
    write_or_print(export_samples(samples), args.out or str(workdir / "samples.jsonl"))


def train_config(args, cfg: dict, seed: int) -> TrainConfig:
    tc = dict(cfg.get("train", {}))
    weights = LossWeights(**tc.pop("weights", {}))
    for key in ("epochs", "learning_rate", "batch_size"):
        if getattr(args, key, None) is not None:
            tc[key] = getattr(args, key)
    if args.no_constraint:
        weights = replace(weights, constraint=0.0)
    return TrainConfig(**{**tc, "seed": seed, "weights": weights})


def cmd_train(args, cfg):
    workdir = Path(args.workdir)
    seed = resolve_seed(args, cfg)
    g, queries = load_workload(workdir)
    samples = load_samples(Path(args.samples or workdir / "samples.jsonl").read_text())
    emb = load_embeddings(Path(args.embeddings or workdir / "embeddings.json"))
    data = bench.training_set(g, [q for q in queries if q.split == "train"], samples)
    model = cfg.get("model", {})
    enc = dict(model.get("encoder", {}))
    if "layer_dims" in enc:
        enc["layer_dims"] = tuple(enc["layer_dims"])
    enc = EncoderConfig(**{"d_label": emb.shape[1], **enc})
    heads = HeadConfig(tuple(model.get("hidden", HeadConfig().hidden)))
    bundle, log = train(ModelBundle.create(emb, seed, enc, heads), data,
                        train_config(args, cfg, seed))
    Path(args.out or workdir / "model.json").write_text(bundle.to_json())
    Path(args.loss_log or workdir / "loss.csv").write_text(epoch_log_csv(log))


def _query_inputs(args):
    g = read_graph(args.graph)
    q = read_graph(args.query, g.label_alphabet_size)
    return g, q, build_candidates(g, q)


def cmd_plan(args, cfg):
    g, q, ctx = _query_inputs(args)
    trace = make_plan(args.planner, g, q, ctx, load_model(args.model))
    print(trace.to_json() if args.explain else " ".join(map(str, trace.order)))


def cmd_run(args, cfg):
    g, q, ctx = _query_inputs(args)
    trace = make_plan(args.planner, g, q, ctx, load_model(args.model))
    stats = enumerate_matches(g, q, ctx, trace.order, budget_from(args))
    line = {"planner": args.planner, "order": trace.order, "match_count": stats.match_count,
            "probe_count": stats.probe_count, "truncated": stats.truncated}
    if args.timings:
        line["elapsed"] = round(stats.elapsed, 6)
    print(json.dumps(line))


def cmd_estimate(args, cfg):
    g, q, ctx = _query_inputs(args)
    bundle = load_model(args.model)
    if bundle is None:
        raise CliError("estimate needs --model")
    state = vset(args.state) if args.state else (1 << q.vertex_count) - 1
    model = QueryModel(bundle, q, ctx)
    removable = in_neighbors(q, state)
    pairs = [(state & ~(1 << u), state) for u in removable]
    out = {
        "state": members(state),
        "cardinality": model.predict_card([state])[0],
        "min_cost": model.predict_min_cost([state])[0],
        "transitions": [{"remove": u, "cost": c}
                        for u, c in zip(removable, model.predict_cost(pairs))],
    }
    print(json.dumps(out))


def cmd_bench(args, cfg):
    workdir = Path(args.workdir)
    g, queries = load_workload(workdir)
    bundle = load_model(args.model or (workdir / "model.json" if "neuso" in args.planners
                                       else None))
    report = bench.run_bench(g, queries, args.planners, bundle, args.max_probes)
    write_or_print(report.to_csv(args.timings), args.out_csv or str(workdir / "bench.csv"))
    write_or_print(bench.summary_json(report.summary(args.baseline)),
                   args.out_json or str(workdir / "bench.json"))


# -- parser ----------------------------------------------------------------------------

def _budget_flags(p, probes=None):
    p.add_argument("--max-probes", type=positive(int), default=probes)
    p.add_argument("--max-matches", type=positive(int), default=None)
    p.add_argument("--max-elapsed", type=positive(float), default=None)


def _query_flags(p):
    p.add_argument("--graph", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--planner", choices=PLANNERS, default="neuso")
    p.add_argument("--model")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neuso", description=__doc__)
    parser.add_argument("--config", help="JSON config with schema_version")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a data graph and query workload")
    p.add_argument("--workdir", required=True)
    p.add_argument("--vertices", type=positive(int), default=10_000)
    p.add_argument("--avg-degree", type=positive(float), default=8.0)
    p.add_argument("--labels", type=positive(int), default=20)
    p.add_argument("--skew", type=float, default=1.0)
    p.add_argument("--sizes", type=lambda s: [int(x) for x in s.split(",")],
                   default=[4, 8, 12, 16])
    p.add_argument("--per-size", type=positive(int), default=25)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("embed", help="build the label embedding table")
    p.add_argument("--workdir", required=True)
    p.add_argument("--dim", type=positive(int), default=127)
    p.add_argument("--out")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("collect", help="measure CCG samples (train split by default)")
    p.add_argument("--workdir", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="train")
    p.add_argument("--state-limit", type=positive(int), default=DEFAULT_STATE_LIMIT)
    p.add_argument("--out")
    _budget_flags(p, probes=2_000_000)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="train the estimator")
    p.add_argument("--workdir", required=True)
    p.add_argument("--samples")
    p.add_argument("--embeddings")
    p.add_argument("--epochs", type=positive(int))
    p.add_argument("--learning-rate", type=positive(float))
    p.add_argument("--batch-size", type=positive(int))
    p.add_argument("--no-constraint", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--loss-log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("plan", help="print a matching order")
    _query_flags(p)
    p.add_argument("--explain", action="store_true", help="print the full plan trace as JSON")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="plan and execute one query")
    _query_flags(p)
    _budget_flags(p, probes=bench.UNSOLVED_PROBES)
    p.add_argument("--timings", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("estimate", help="model estimates for one (sub)query")
    _query_flags(p)
    p.add_argument("--state", type=lambda s: [int(x) for x in s.split(",")],
                   help="comma-separated query vertices (default: all)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bench", help="benchmark planners on the test split")
    p.add_argument("--workdir", required=True)
    p.add_argument("--model")
    p.add_argument("--planners", type=lambda s: s.split(","),
                   default=["neuso", "gcbo", "candidate_size", "backward_edges"])
    p.add_argument("--baseline", default="candidate_size")
    p.add_argument("--max-probes", type=positive(int), default=bench.UNSOLVED_PROBES)
    p.add_argument("--timings", action="store_true")
    p.add_argument("--out-csv")
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except (CliError, GraphFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

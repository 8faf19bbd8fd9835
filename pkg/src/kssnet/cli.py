"""Command-line surface: build and inspect label graphs, run gradient checks,
train the toy model, evaluate scores, and build initial embeddings.

Exit codes: 0 on success, 1 on validation errors (bad flags, bad files),
2 on unexpected runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import checks, graph, ingest, metrics, storage, synthetic
from .model import KssModel, TrainConfig, predict, train_toy

_BASE_SCHEDULE = (256, 512, 1024, 2048)


class CliError(Exception):
    """Validation failure; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); flag problems are validation
        raise CliError(f"{self.prog}: {message}")


def _in_unit(value: float, flag: str) -> float:
    if not 0.0 <= value <= 1.0:
        raise CliError(f"{flag} must lie in [0, 1], got {value}")
    return value


def _positive_file(path: str, flag: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{flag}: no such file: {path}")
    return p


def _print_kv(pairs: dict) -> None:
    for key, value in pairs.items():
        print(f"{key}={value}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="kssnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="construct the superimposed label graph")
    p.add_argument("--annotations", required=True, help="sample_id label... lines")
    p.add_argument("--knowledge", required=True, help="TSV head/relation/tail/weight triples")
    p.add_argument("--vocab", required=True, help="one label per line")
    p.add_argument("--lambda", dest="lam", type=float, default=0.4,
                   help="statistical-vs-knowledge mixing weight")
    p.add_argument("--tau", type=float, default=0.02, help="edge-pruning threshold")
    p.add_argument("--eta", type=float, default=0.4, help="identity mixing weight")
    p.add_argument("--binarize-t", type=float, default=0.4,
                   help="conditional-probability cut for the statistical graph")
    p.add_argument("--out", required=True, help="output path for the mixed adjacency")
    p.add_argument("--out-normalized", default=None,
                   help="output path for the normalized adjacency (default: OUT.norm)")
    p.add_argument("--summary-json", default=None, help="also write the summary as JSON")

    p = sub.add_parser("inspect", help="summarize a stored adjacency matrix")
    p.add_argument("--graph", required=True)
    p.add_argument("--binary", action="store_true", help="read the binary format")

    p = sub.add_parser("gradcheck", help="finite-difference checks of every component")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("train-toy", help="train the toy model on the synthetic dataset")
    p.add_argument("--config", required=True, help="flat key = value training config")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--history", required=True, help="append-only CSV (epoch, loss, mAP)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--channel-divisor", type=int, default=None,
                   help="scale the 256/512/1024/2048 stage schedule")

    p = sub.add_parser("evaluate", help="print the seven-metric table")
    p.add_argument("--scores", default=None, help="score matrix (text, 'rows cols' header)")
    p.add_argument("--targets", default=None, help="binary target matrix, same format")
    p.add_argument("--checkpoint", default=None, help="evaluate a trained checkpoint instead")
    p.add_argument("--config", default=None, help="training config used with --checkpoint")
    p.add_argument("--decision", default="sigmoid:0.5",
                   help="decision rule: sigmoid:T, score:T, or top_k:K")

    p = sub.add_parser("embed", help="build initial label embeddings from a word table")
    p.add_argument("--table", required=True, help="GloVe-style text embedding table")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="output matrix (text)")

    return parser


# --- subcommand bodies ----------------------------------------------------


def _cmd_build_graph(args) -> int:
    lam = _in_unit(args.lam, "--lambda")
    eta = _in_unit(args.eta, "--eta")
    if args.tau < 0:
        raise CliError(f"--tau must be >= 0, got {args.tau}")
    binarize = _in_unit(args.binarize_t, "--binarize-t")

    vocab = ingest.load_vocabulary(_positive_file(args.vocab, "--vocab"))
    ann = ingest.load_annotations(_positive_file(args.annotations, "--annotations"), vocab)
    edges = ingest.load_knowledge_edges(_positive_file(args.knowledge, "--knowledge"), vocab)
    config = graph.GraphPipelineConfig(lam=lam, tau=args.tau, eta=eta,
                                       binarize_threshold=binarize)
    a_ks, a_norm = graph.build_ks_graph(ann, edges, config)

    out = Path(args.out)
    out_norm = Path(args.out_normalized) if args.out_normalized else out.with_name(out.name + ".norm")
    graph.save_adjacency_text(a_ks, out)
    graph.save_adjacency_text(a_norm, out_norm)

    summary = {
        "lambda": lam, "tau": args.tau, "eta": eta, "binarize_t": binarize,
        "dropped_knowledge_records": edges.dropped,
        **graph.graph_summary(a_ks),
        "out": str(out), "out_normalized": str(out_norm),
    }
    _print_kv(summary)
    if args.summary_json:
        Path(args.summary_json).write_text(json.dumps(summary, indent=2) + "\n")
    return 0


def _cmd_inspect(args) -> int:
    path = _positive_file(args.graph, "--graph")
    a = graph.load_adjacency_binary(path) if args.binary else graph.load_adjacency_text(path)
    _print_kv(graph.graph_summary(a))
    return 0


def _cmd_gradcheck(args) -> int:
    results = checks.run_standard_checks(seed=args.seed, step=args.step,
                                         corrupt=args.corrupt_backward)
    failed = False
    for name, err in results.items():
        tol = checks.GRADCHECK_TOLERANCES[name]
        ok = err <= tol
        failed |= not ok
        print(f"{name} max_rel_err={err:.3e} tol={tol:.0e} {'ok' if ok else 'FAIL'}")
    if failed:
        raise CliError("gradient check exceeded tolerance")
    return 0


def _parse_channels(cfg: dict[str, str], divisor: int | None) -> tuple[int, ...]:
    if divisor is not None:
        if divisor < 1 or any(c % divisor for c in _BASE_SCHEDULE):
            raise CliError(f"--channel-divisor must divide {_BASE_SCHEDULE}, got {divisor}")
        return tuple(c // divisor for c in _BASE_SCHEDULE)
    if "stage_channels" in cfg:
        return tuple(int(v) for v in cfg["stage_channels"].split(","))
    return (16, 32, 64, 128)


def _load_toy_setup(config_path, seed_override=None, divisor=None):
    """Rebuild dataset, graph, and model deterministically from a config file."""
    try:
        cfg = storage.load_config(_positive_file(config_path, "--config"))
    except ValueError as exc:
        raise CliError(str(exc)) from None

    def get(key, default, cast):
        return cast(cfg[key]) if key in cfg else default

    seed = seed_override if seed_override is not None else get("seed", 0, int)
    stage_channels = _parse_channels(cfg, divisor)
    data = synthetic.make_dataset(
        n_train=get("n_train", 2000, int),
        n_val=get("n_val", 500, int),
        n_labels=get("n_labels", 8, int),
        size=get("image_size", 16, int),
        embed_dim=get("embed_dim", 12, int),
        seed=get("data_seed", 0, int),
        weak_amp=get("weak_amp", 0.35, float),
        noise=get("noise", 0.35, float),
    )
    gcfg = graph.GraphPipelineConfig(
        lam=get("lambda", 0.4, float),
        tau=get("tau", 0.02, float),
        eta=get("eta", 0.4, float),
        binarize_threshold=get("binarize_t", 0.4, float),
    )
    variant = get("graph", "ks", str)
    if variant == "identity":
        adjacency = np.eye(data.n_labels)
    elif variant in ("ks", "statistical", "knowledge"):
        overrides = {"statistical": 1.0, "knowledge": 0.0}
        if variant in overrides:
            gcfg = graph.GraphPipelineConfig(
                lam=overrides[variant], tau=gcfg.tau, eta=gcfg.eta,
                binarize_threshold=gcfg.binarize_threshold,
            )
        _, adjacency = graph.build_ks_graph(data.annotations, data.knowledge_edges, gcfg)
    else:
        raise CliError(f"config key 'graph' must be ks|statistical|knowledge|identity, got {variant!r}")

    model = KssModel(
        adjacency=adjacency,
        n_labels=data.n_labels,
        embed_dim=get("embed_dim", 12, int),
        stage_channels=stage_channels,
        gcn_depth=get("gcn_depth", 4, int),
        lc_stages=None if get("lc", "true", str).lower() in ("true", "1", "yes") else (),
        dropout_rate=get("dropout", 0.5, float),
        seed=seed,
        dtype=get("dtype", "float32", str),
    )
    train_cfg = TrainConfig(
        epochs=get("epochs", 30, int),
        batch_size=get("batch_size", 50, int),
        lr=get("lr", 0.01, float),
        gcn_lr=get("gcn_lr", 0.01, float),
        weight_decay=get("weight_decay", 1e-4, float),
        dropout=get("dropout", 0.5, float),
        seed=seed,
        dtype=get("dtype", "float32", str),
        stop_at_train_map=get("stop_at_train_map", None, float),
    )
    return data, model, train_cfg, stage_channels


def _cmd_train_toy(args) -> int:
    data, model, cfg, stage_channels = _load_toy_setup(
        args.config, seed_override=args.seed, divisor=args.channel_divisor
    )
    print(f"stage_channels={','.join(str(c) for c in stage_channels)}")
    print(f"seed={cfg.seed}")

    history_path = Path(args.history)
    new_file = not history_path.exists()
    with open(history_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(["epoch", "loss", "map"])

        def on_epoch(record):
            writer.writerow([record["epoch"], f"{record['loss']:.6f}", f"{record['train_map']:.6f}"])
            fh.flush()

        history = train_toy(model, data.train, cfg, val=data.val, on_epoch=on_epoch)

    model.save(args.checkpoint)
    if history:
        last = history[-1]
        print(f"epochs_run={last['epoch']}")
        print(f"final_loss={last['loss']:.6f}")
        print(f"final_train_map={last['train_map']:.6f}")
        print(f"final_val_map={last['val_map']:.6f}")
    return 0


def _parse_decision(spec: str):
    kind, _, arg = spec.partition(":")
    if kind not in ("sigmoid", "score", "top_k"):
        raise CliError(f"--decision must be sigmoid:T, score:T, or top_k:K, got {spec!r}")
    try:
        value = int(arg) if kind == "top_k" else float(arg)
    except ValueError:
        raise CliError(f"--decision: bad argument in {spec!r}") from None
    return (kind, value)


def _cmd_evaluate(args) -> int:
    decision = _parse_decision(args.decision)
    if args.checkpoint is not None:
        if args.config is None:
            raise CliError("--checkpoint requires --config to rebuild the model")
        data, model, _, _ = _load_toy_setup(args.config)
        if not Path(args.checkpoint).is_file():
            raise CliError(f"--checkpoint: no such file: {args.checkpoint}")
        model.load(args.checkpoint)
        scores = predict(model, data.val.x, data.val.e0)
        targets = data.val.y
    else:
        if args.scores is None or args.targets is None:
            raise CliError("evaluate needs either --scores/--targets or --checkpoint/--config")
        try:
            scores = storage.load_matrix_text(_positive_file(args.scores, "--scores"))
            targets = storage.load_matrix_text(_positive_file(args.targets, "--targets"))
        except ValueError as exc:
            raise CliError(str(exc)) from None
        if scores.shape != targets.shape:
            raise CliError(
                f"shape mismatch: scores {scores.shape} vs targets {targets.shape}"
            )
        if not np.all((targets == 0) | (targets == 1)):
            raise CliError("--targets: entries must be 0 or 1")
    try:
        map_value = metrics.map_score(scores, targets)
        prf = metrics.prf_suite(scores, targets, decision)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    print(metrics.format_metric_table(map_value, prf))
    return 0


def _cmd_embed(args) -> int:
    vocab = ingest.load_vocabulary(_positive_file(args.vocab, "--vocab"))
    table = ingest.load_embedding_table(_positive_file(args.table, "--table"))
    try:
        e0 = ingest.build_initial_embeddings(table, vocab)
    except ingest.UnresolvedLabelError as exc:
        raise CliError(str(exc)) from None
    storage.save_matrix_text(e0, args.out)
    _print_kv({"labels": e0.shape[0], "dim": e0.shape[1], "out": args.out})
    return 0


_COMMANDS = {
    "build-graph": _cmd_build_graph,
    "inspect": _cmd_inspect,
    "gradcheck": _cmd_gradcheck,
    "train-toy": _cmd_train_toy,
    "evaluate": _cmd_evaluate,
    "embed": _cmd_embed,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ingest.FormatError, ingest.UnresolvedLabelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a runtime failure
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())

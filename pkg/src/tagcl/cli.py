"""Command-line entry point: gen, train, eval, verify, sweep."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import CONFIG_NAME, ConfigError, RunConfig, load_config, read_pairs
from .datagen import GenerationError, generate_planted_tag, generate_to_file
from .encoder import embed_nodes, load_checkpoint, save_checkpoint
from .evaluation import link_prediction_eval, node_classification_probe, stratified_split
from .graph import GraphValidationError, TagFormatError, TextAttributedGraph, load_tag, write_tag
from .objectives import TERMS
from .ppr import IsolatedNodeError
from .trainer import EdgeSplits, NumericalFailure, split_edges, subsample_edges, train
from .verify import SUITES, run_suites

log = logging.getLogger("tagcl")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

GRAPH_NAME = "graph.tag"
SPLITS_NAME = "splits.npz"
CHECKPOINT_NAME = "checkpoint.npz"
INDUCTIVE_CHECKPOINT_NAME = "checkpoint_inductive.npz"
HISTORY_NAME = "history.csv"
RUN_META_NAME = "run.txt"
ABLATIONS = (*TERMS, "hfc")
SWEEP_ALIASES = {"epochs": "max_epochs"}


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _probability(s: str) -> float:
    v = float(s)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {s}")
    return v


def _key_value(s: str) -> tuple[str, str]:
    if "=" not in s:
        raise argparse.ArgumentTypeError(f"expected key=value, got {s!r}")
    k, v = s.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", type=Path, help="output file or directory")
    common.add_argument("--quiet", action="store_true", help="only print warnings and final reports")
    common.add_argument(
        "--set", dest="overrides", action="append", type=_key_value, default=[], metavar="KEY=VALUE",
        help="override any config key (repeatable)",
    )

    parser = _Parser(prog="tagcl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen", parents=[common], help="generate a planted-community graph")
    gen.add_argument("--nodes", type=_positive_int)
    gen.add_argument("--communities", type=_positive_int)
    gen.add_argument("--p-in", type=_probability)
    gen.add_argument("--p-out", type=_probability)
    gen.add_argument("--tokens-per-node", type=_positive_int)
    gen.add_argument("--vocab-per-community", type=_positive_int)
    gen.add_argument("--shared-fraction", type=_probability)

    tr = sub.add_parser("train", parents=[common], help="train an encoder; --out is a fresh run directory")
    tr.add_argument("--graph", type=Path, required=True)
    tr.add_argument("--ablate", choices=ABLATIONS, help="zero one loss weight, or 'hfc' to force alpha=1")

    ev = sub.add_parser("eval", parents=[common], help="evaluate a run directory")
    ev.add_argument("--run", type=Path, required=True)
    ev.add_argument("--task", choices=("link", "node"), default="link")
    ev.add_argument("--mode", choices=("transductive", "inductive"), default="transductive")
    ev.add_argument("--dump-ranks", action="store_true", help="also write per-query ranks (link task)")

    ve = sub.add_parser("verify", parents=[common], help="run self-check suites")
    ve.add_argument("--suite", choices=(*SUITES, "all"), default="all")
    ve.add_argument("--alpha", type=_probability, help="single alpha for the lemma1 suite")
    ve.add_argument("--k", type=_positive_int, default=3)

    sw = sub.add_parser("sweep", parents=[common], help="vary one parameter, train and evaluate per value and seed")
    sw.add_argument("--param", required=True)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--seeds", type=_positive_int, default=1)
    sw.add_argument("--graph", type=Path, help="fixed graph; default is one generated per seed")
    sw.add_argument("--ablate", choices=ABLATIONS)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _resolve_config(args, extra: dict | None = None) -> RunConfig:
    overrides: dict[str, object] = dict(args.overrides)
    overrides.update(extra or {})
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config is not None and not args.config.is_file():
        raise ValidationError(f"config file not found: {args.config}")
    return load_config(args.config, overrides)


def _ablated(cfg: RunConfig, ablate: str | None) -> RunConfig:
    if ablate is None:
        return cfg
    if ablate == "hfc":
        return cfg.with_overrides({"alpha": 1.0})
    return cfg.with_overrides({f"lambda_{ablate}": 0.0})


def _fresh_dir(path: Path | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} needs --out DIR")
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        raise ValidationError(f"{path} already exists and is not an empty directory; use a fresh one")
    return path


def _write_new(path: Path, text: str) -> None:
    """Create ``path``; existing reports are never overwritten."""
    with open(path, "x", encoding="utf-8") as fh:
        fh.write(text)


def _report_text(pairs: dict[str, object]) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in pairs.items())


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)


def _load_graph(path: Path) -> TextAttributedGraph:
    if not path.is_file():
        raise ValidationError(f"graph file not found: {path}")
    return load_tag(path)


def _prepare_splits(g: TextAttributedGraph, cfg: RunConfig) -> EdgeSplits:
    splits = split_edges(g, seed=cfg.seed)
    if cfg.train_fraction < 1.0:
        splits = EdgeSplits(subsample_edges(splits.train, cfg.train_fraction, cfg.seed), splits.valid, splits.test)
    return splits


def _link_metrics(params, g: TextAttributedGraph, splits: EdgeSplits, cfg: RunConfig):
    g_train = g.with_edges(splits.train)
    rng = np.random.default_rng([cfg.seed, 2])
    return link_prediction_eval(params, g_train, splits.test, cfg.negatives_per_query, rng, cfg.ndcg_cutoff)


def _probe(params, g: TextAttributedGraph, splits: EdgeSplits, cfg: RunConfig, mode: str, split=None):
    if g.labels is None:
        raise ValidationError("graph has no labels; node classification needs them")
    with torch.no_grad():
        emb = embed_nodes(params, g.with_edges(splits.train)).numpy()
    return node_classification_probe(emb, g.labels, cfg.probe_config(mode), split=split)


def _train_inductive(g: TextAttributedGraph, splits: EdgeSplits, cfg: RunConfig):
    """Encoder trained with the probe's test-split nodes kept out of every batch."""
    split = stratified_split(g.labels, seed=cfg.seed)
    params, _ = train(g, splits, cfg.train_config(), cfg.encoder_config(g), exclude_nodes=split["test"])
    return params, split


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    extra = {
        k: getattr(args, k)
        for k in ("nodes", "communities", "p_in", "p_out", "tokens_per_node", "vocab_per_community", "shared_fraction")
        if getattr(args, k) is not None
    }
    cfg = _resolve_config(args, extra)
    if args.out is None:
        raise UsageError("gen needs --out FILE")
    if args.out.exists():
        raise ValidationError(f"{args.out} already exists")
    g = generate_to_file(cfg.gen_config(), args.out)
    print(f"wrote {args.out} nodes={g.node_count} edges={len(g.edges())} vocab={g.vocab_size}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _ablated(_resolve_config(args), args.ablate)
    g = _load_graph(args.graph)
    out = _fresh_dir(args.out, "train")
    splits = _prepare_splits(g, cfg)

    t0 = time.perf_counter()
    params, history = train(g, splits, cfg.train_config(), cfg.encoder_config(g))
    seconds = time.perf_counter() - t0

    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / CONFIG_NAME)
    write_tag(g, out / GRAPH_NAME)
    splits.save(out / SPLITS_NAME)
    save_checkpoint(params, out / CHECKPOINT_NAME)
    history.write_csv(out / HISTORY_NAME)
    meta = {
        "graph_source": str(args.graph),
        "ablate": args.ablate or "none",
        "train_edges": len(splits.train),
        "valid_edges": len(splits.valid),
        "test_edges": len(splits.test),
        "stop_epoch": history.stop_epoch,
        "best_epoch": history.best_epoch,
        "best_val_p1": history.best_p1,
        "validation_scheme": f"link P@1, {cfg.negatives_per_query} uniform non-neighbour negatives, same as test",
        "seconds": seconds,
    }
    _write_new(out / RUN_META_NAME, _report_text(meta))
    print(f"trained {out} stop_epoch={history.stop_epoch} best_epoch={history.best_epoch} best_val_p1={history.best_p1:.4f}")
    return EXIT_OK


def _load_run(run: Path):
    if not run.is_dir():
        raise ValidationError(f"run directory not found: {run}")
    for name in (CONFIG_NAME, GRAPH_NAME, SPLITS_NAME, CHECKPOINT_NAME):
        if not (run / name).is_file():
            raise ValidationError(f"{run} has no {name}")
    cfg = load_config(run / CONFIG_NAME)
    return cfg, load_tag(run / GRAPH_NAME), EdgeSplits.load(run / SPLITS_NAME), load_checkpoint(run / CHECKPOINT_NAME)


def cmd_eval(args) -> int:
    cfg, g, splits, params = _load_run(args.run)
    if args.config is not None and not args.config.is_file():
        raise ValidationError(f"config file not found: {args.config}")
    overrides: dict[str, object] = dict(read_pairs(args.config)) if args.config is not None else {}
    overrides.update(args.overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = cfg.with_overrides(overrides)
    out_dir = args.out or args.run
    if args.task == "link":
        report_path = out_dir / "link_metrics.txt"
        if report_path.exists():
            raise ValidationError(f"{report_path} already exists")
        res = _link_metrics(params, g, splits, cfg)
        pairs = {"task": "link", **res.metrics.as_dict(), "negatives_per_query": cfg.negatives_per_query, "ndcg_cutoff": cfg.ndcg_cutoff}
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_new(report_path, _report_text(pairs))
        if args.dump_ranks:
            rows = "".join(f"{u},{v},{r}\n" for (u, v), r in zip(res.edges, res.ranks))
            _write_new(out_dir / "link_ranks.csv", "u,v,rank\n" + rows)
        m = res.metrics
        print(f"link p1={m.p1:.4f} ndcg={m.ndcg:.4f} mrr={m.mrr:.4f} queries={m.count}")
        return EXIT_OK

    report_path = out_dir / f"node_{args.mode}.txt"
    if report_path.exists():
        raise ValidationError(f"{report_path} already exists")
    if g.labels is None:
        raise ValidationError("graph has no labels; node classification needs them")
    split = None
    if args.mode == "inductive":
        ckpt = args.run / INDUCTIVE_CHECKPOINT_NAME
        if ckpt.exists():
            params, split = load_checkpoint(ckpt), stratified_split(g.labels, seed=cfg.seed)
        else:
            params, split = _train_inductive(g, splits, cfg)
            save_checkpoint(params, ckpt)
    res = _probe(params, g, splits, cfg, args.mode, split)
    pairs = {"task": "node", "mode": args.mode, "accuracy": res.accuracy, "val_accuracy": res.val_accuracy, "best_epoch": res.best_epoch}
    pairs.update({f"class_{c}_accuracy": a for c, a in res.per_class.items()})
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_new(report_path, _report_text(pairs))
    print(f"node mode={args.mode} accuracy={res.accuracy:.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _resolve_config(args)
    if args.out is not None and args.out.exists():
        raise ValidationError(f"{args.out} already exists")
    reports = run_suites([args.suite], alpha=args.alpha, k=args.k, seed=cfg.seed)
    text = "".join(line + "\n" for r in reports for line in r.lines())
    passed = all(r.passed for r in reports)
    text += f"all_passed={str(passed).lower()}\n"
    if args.out is not None:
        _write_new(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK if passed else EXIT_NUMERICAL


SWEEP_COLUMNS = ("param", "value", "seed", "p1", "ndcg", "mrr", "probe_accuracy", "stop_epoch", "best_val_p1")


def sweep_rows(base: RunConfig, param: str, values: Sequence[str], seeds: Sequence[int], graph: TextAttributedGraph | None = None):
    """Yield one result row per (value, seed); every run is independently seeded."""
    key = SWEEP_ALIASES.get(param, param)
    for raw in values:
        for seed in seeds:
            cfg = base.with_overrides({key: raw, "seed": seed})
            g = graph if graph is not None else generate_planted_tag(cfg.gen_config())
            splits = _prepare_splits(g, cfg)
            params, history = train(g, splits, cfg.train_config(), cfg.encoder_config(g))
            m = _link_metrics(params, g, splits, cfg).metrics
            acc = _probe(params, g, splits, cfg, "transductive").accuracy if g.labels is not None else float("nan")
            row = (param, raw, seed, m.p1, m.ndcg, m.mrr, acc, history.stop_epoch, history.best_p1)
            log.info("sweep %s=%s seed=%d p1=%.4f probe=%.4f", param, raw, seed, m.p1, acc)
            yield row


def cmd_sweep(args) -> int:
    cfg = _ablated(_resolve_config(args), args.ablate)
    key = SWEEP_ALIASES.get(args.param, args.param)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values needs at least one value")
    for v in values:
        cfg.with_overrides({key: v})  # reject bad keys and values before any work
    graph = _load_graph(args.graph) if args.graph is not None else None
    out = _fresh_dir(args.out, "sweep") if args.out is not None else None
    seeds = [cfg.seed + i for i in range(args.seeds)]

    rows = list(sweep_rows(cfg, args.param, values, seeds, graph))
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    writer.writerows(rows)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.write(out / CONFIG_NAME)
        with open(out / "sweep.csv", "x", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            w.writerows(rows)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, ConfigError, TagFormatError, GraphValidationError, GenerationError, IsolatedNodeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

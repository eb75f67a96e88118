"""Command-line experiment runner: ``run``, ``generate`` and ``sweep``.

Reports are JSON documents with sorted keys so two runs can be diffed
directly.  Metric sequences are kept apart from wall-clock timings, which
naturally differ between otherwise identical runs.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import diffnum as dn
from . import model as M
from .synthetic import KINDS, generate, generate_synthetic
from .tgstore import CsvSchema, EventLog, chronological_split, ingest_csv

_SAMPLING = {"recent": "most_recent", "uniform": "uniform"}


class CliError(Exception):
    pass


def _clean(obj):
    """Replace non-finite floats by None so the report is strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _add_data_args(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", type=Path, help="interaction CSV (source,target,timestamp,label,features...)")
    src.add_argument("--generate", choices=KINDS, help="use a synthetic stream instead of a CSV")
    p.add_argument("--nodes", type=int, default=100, help="synthetic node count (default 100)")
    p.add_argument("--events", type=int, default=10000, help="synthetic event count (default 10000)")
    p.add_argument("--unipartite", action="store_true", help="CSV target ids share the source id space")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    hp = M.HyperParams()
    p.add_argument("--task", choices=("link", "node"), default="link")
    p.add_argument("--inductive", action="store_true", help="headline metric is the inductive one")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=hp.batch_size)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=hp.lr)
    p.add_argument("--memory-dim", type=int, default=hp.memory_dim)
    p.add_argument("--embedding-dim", type=int, default=hp.embedding_dim)
    p.add_argument("--time-dim", type=int, default=hp.time_dim)
    p.add_argument("--heads", type=int, default=hp.heads)
    p.add_argument("--dropout", type=float, default=hp.dropout)
    p.add_argument("--patience", type=int, default=hp.patience)
    p.add_argument("--neighbors", type=int, help="override the preset's neighbour count")
    p.add_argument("--layers", type=int, help="override the preset's embedding depth")
    p.add_argument("--sampling", choices=tuple(_SAMPLING), help="override the preset's sampler")
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgn", description="Temporal graph network experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate one variant, write a JSON report")
    _add_data_args(run)
    _add_train_args(run)
    run.add_argument("--variant", default="tgn-attn")
    run.add_argument("--out", type=Path, help="report path (default: print to stdout)")

    gen = sub.add_parser("generate", help="write a synthetic stream as CSV")
    gen.add_argument("kind", choices=KINDS)
    gen.add_argument("--nodes", type=int, default=100)
    gen.add_argument("--events", type=int, default=10000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=Path, required=True)

    sweep = sub.add_parser("sweep", help="run several variants on shared data and seed")
    _add_data_args(sweep)
    _add_train_args(sweep)
    sweep.add_argument("--variants", required=True, help="comma-separated preset names")
    sweep.add_argument("--out", type=Path, help="write the table rows and reports as JSON here")
    return parser


def load_data(args) -> tuple[EventLog, dict]:
    if args.data is not None:
        try:
            log = ingest_csv(args.data, CsvSchema(bipartite=not args.unipartite))
        except OSError as exc:
            raise CliError(f"cannot read {args.data}: {exc}") from None
        return log, {"path": str(args.data), "bipartite": not args.unipartite}
    kind = args.generate or "periodic"
    log = generate(kind, args.nodes, args.events, seed=args.seed)
    return log, {"generator": kind, "nodes": args.nodes, "events": args.events, "seed": args.seed}


def resolve(args, variant_name: str) -> tuple[M.VariantConfig, M.HyperParams]:
    try:
        variant = M.get_preset(variant_name)
    except KeyError as exc:
        raise CliError(exc.args[0]) from None
    try:
        variant = M.with_overrides(
            variant, neighbors=args.neighbors, layers=args.layers,
            sampling=_SAMPLING.get(args.sampling) if args.sampling else None)
        hp = M.HyperParams(memory_dim=args.memory_dim, embedding_dim=args.embedding_dim,
                           time_dim=args.time_dim, heads=args.heads, dropout=args.dropout,
                           lr=args.lr, batch_size=args.batch_size, patience=args.patience)
    except (TypeError, ValueError) as exc:
        raise CliError(f"malformed override: {exc}") from None
    if min(hp.memory_dim, hp.embedding_dim, hp.time_dim, hp.batch_size, hp.heads) < 1:
        raise CliError("malformed override: dimensions, heads and batch size must be positive")
    if not 0.0 <= hp.dropout < 1.0 or hp.lr <= 0 or args.epochs < 0:
        raise CliError("malformed override: need 0 <= dropout < 1, lr > 0 and epochs >= 0")
    return variant, hp


def _safe_eval(model, log, split, setting, hp) -> dict:
    try:
        return M.evaluate(model, log, split, setting, "test", hp.batch_size).to_dict()
    except ValueError as exc:
        return {"skipped": str(exc)}


def run_experiment(args, variant_name: str, log: EventLog, data_desc: dict) -> dict:
    dn.set_default_dtype(args.dtype)
    variant, hp = resolve(args, variant_name)
    split = chronological_split(log)
    try:
        model = M.build_variant(variant, hp, log.num_nodes, log.edge_dim, seed=args.seed)
    except ValueError as exc:
        raise CliError(f"malformed override: {exc}") from None
    epochs = []

    def record(epoch, train_m, val_m):
        epochs.append({"epoch": epoch, "train_loss": train_m.loss, "train_ap": train_m.ap,
                       "train_auc": train_m.auc, "val_ap": val_m.ap, "val_auc": val_m.auc,
                       "seconds": train_m.seconds})
        print(f"[{variant.name}] epoch {epoch}: loss {train_m.loss:.4f} val AP {val_m.ap:.4f} "
              f"({train_m.seconds:.1f}s)", file=sys.stderr, flush=True)

    start = time.perf_counter()
    state = M.fit(model, log, split, args.epochs, hp, record)
    report = {
        "config": {
            "variant": asdict(variant),
            "hyperparameters": asdict(hp),
            "task": args.task,
            "setting": "inductive" if args.inductive else "transductive",
            "epochs": args.epochs,
            "seed": args.seed,
            "dtype": args.dtype,
            "data": data_desc,
        },
        "split": {"train_end": split.train_end, "val_end": split.val_end, "events": len(log),
                  "inductive_nodes": len(split.inductive_nodes)},
        "epochs": epochs,
        "best_epoch": state.best_epoch,
        "variant": variant.name,
        "seed": args.seed,
    }
    if args.task == "link":
        test = {s: _safe_eval(model, log, split, s, hp) for s in ("transductive", "inductive")}
        report["test"] = test
        report["ap"] = test[report["config"]["setting"]].get("ap")
    else:
        try:
            report["node"] = M.train_node_classifier(model, log, split, epochs=max(args.epochs, 1),
                                                     batch_size=hp.batch_size)
        except ValueError as exc:
            raise CliError(str(exc)) from None
    report["seconds_total"] = time.perf_counter() - start
    secs = [e["seconds"] for e in epochs]
    report["seconds_per_epoch"] = float(np.mean(secs)) if secs else 0.0
    return _clean(report)


def write_report(report: dict, out: Path | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)


def format_table(rows: list[dict]) -> str:
    lines = [f"{'variant':<12} {'AP':>8} {'sec/epoch':>10}"]
    for r in rows:
        ap = "n/a" if r["ap"] is None else f"{r['ap']:.4f}"
        lines.append(f"{r['variant']:<12} {ap:>8} {r['seconds_per_epoch']:>10.2f}")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            path = generate_synthetic(args.kind, args.nodes, args.events, args.seed, args.out)
            print(path)
            return 0
        log, desc = load_data(args)
        if args.command == "run":
            write_report(run_experiment(args, args.variant, log, desc), args.out)
            return 0
        names = [v.strip() for v in args.variants.split(",") if v.strip()]
        if len(names) < 2:
            raise CliError("sweep needs at least two variants")
        for name in names:
            resolve(args, name)  # fail fast on unknown presets
        reports = [run_experiment(args, name, log, desc) for name in names]
        rows = [{"variant": r["variant"], "ap": r.get("ap"), "seconds_per_epoch": r["seconds_per_epoch"]}
                for r in reports]
        print(format_table(rows))
        if args.out is not None:
            write_report({"rows": rows, "reports": reports}, args.out)
        return 0
    except (CliError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

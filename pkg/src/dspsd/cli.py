"""Command-line entry point: ``dspsd <subcommand> ...``.

Exit codes: 0 success, 2 data error, 3 configuration/usage error.
Progress goes to stderr (level from ``DSPSD_LOG``), results to files or stdout.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from .dataio import RECIPES, load_dataset, write_synthetic
from .errors import ConfigError, DataError
from .evalviz import (cross_validate, node_embeddings, project_2d, tfidf_opcode_importance, write_importance_csv,
                      write_metrics_csv, write_projection_csv, write_projection_svg)
from .pipeline import ABLATIONS, ModelBundle, TrainConfig, detect, fit
from .txgraph import build_graph

log = logging.getLogger("dspsd")

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

# flag name -> TrainConfig field; flags win over the config file, which wins over defaults
OVERRIDES = {
    "seed": "seed",
    "ablation": "ablation",
    "lr": "lr",
    "epochs_stage1": "epochs_stage1",
    "epochs_stage2": "epochs_stage2",
    "batch_size": "batch_size",
}


class Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 3."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file mirroring TrainConfig fields")
    p.add_argument("--seed", type=int, help="master seed for every random stream")
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs-stage1", dest="epochs_stage1", type=int)
    p.add_argument("--epochs-stage2", dest="epochs_stage2", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--lenient", action="store_true", help="skip malformed transaction rows instead of failing")


def build_parser() -> Parser:
    parser = Parser(prog="dspsd", description="Smart Ponzi scheme detection on transaction graphs.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write a seeded synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--recipe", choices=sorted(RECIPES), default="default")

    p = sub.add_parser("train", help="train both stages and save a model file")
    _data_flags(p)
    _config_flags(p)
    p.add_argument("--out", type=Path, required=True, help="model file to write")

    p = sub.add_parser("detect", help="classify accounts with a trained model")
    p.add_argument("--model", type=Path, required=True)
    _data_flags(p)
    p.add_argument("--ids", type=Path, help="file with one account id per line (default: all contracts)")
    p.add_argument("--threshold", type=float, default=0.0, help="Ponzi iff margin > threshold")
    p.add_argument("--out", type=Path, help="CSV output (default: stdout)")

    p = sub.add_parser("evaluate", help="k-fold cross-validation")
    _data_flags(p)
    _config_flags(p)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1, help="folds trained in parallel")
    p.add_argument("--out", type=Path, default=Path("metrics.csv"))

    p = sub.add_parser("importance", help="rank opcodes by class TF-IDF")
    _data_flags(p)
    p.add_argument("--top", type=int, default=80)
    p.add_argument("--smooth", action="store_true", help="smoothed IDF ln((1+N)/(1+df))+1")
    p.add_argument("--out", type=Path, default=Path("importance.csv"))

    p = sub.add_parser("project", help="2-D PCA projection of node embeddings")
    p.add_argument("--model", type=Path, required=True)
    _data_flags(p)
    p.add_argument("--ids", type=Path, help="file with one account id per line (default: labelled contracts)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("projection.csv"))
    p.add_argument("--svg", type=Path, help="also write a scatter plot")
    return parser


def resolve_config(args) -> TrainConfig:
    base = TrainConfig.load(args.config).to_dict() if args.config else TrainConfig().to_dict()
    for flag, name in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            base[name] = value
    return TrainConfig.from_dict(base)


def _graph(args):
    errors: list = []
    events, accounts, _ = load_dataset(args.data, strict=not args.lenient, errors=errors)
    if errors:
        log.warning("skipped %d malformed transaction rows", len(errors))
    return build_graph(events, accounts)


def _read_ids(path: Optional[Path]) -> Optional[list]:
    if path is None:
        return None
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read ids file {path}: {exc}") from None
    return [ln.strip() for ln in lines if ln.strip()]


def cmd_generate(args) -> int:
    manifest = write_synthetic(args.out, args.recipe, args.seed)
    log.info("wrote %s", manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    config = resolve_config(args)
    graph = _graph(args)

    def progress(epoch, *losses):
        log.debug("epoch %d: %s", epoch, " ".join(f"{x:.4f}" for x in losses))

    bundle = fit(graph, config, progress=progress)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    bundle.save(args.out)
    log.info("model written to %s", args.out)
    return EXIT_OK


def cmd_detect(args) -> int:
    bundle = ModelBundle.load(args.model)
    graph = _graph(args)
    ids = _read_ids(args.ids) or [a.id for a in graph.contracts()]
    rows = detect(ids, bundle, graph, args.threshold)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "margin", "error"])
        for r in rows:
            w.writerow([r["id"], r["label"], "" if r["error"] else r["margin"], r["error"]])
    finally:
        if args.out:
            fh.close()
    bad = sum(1 for r in rows if r["error"])
    if bad:
        log.warning("%d of %d ids could not be scored", bad, len(rows))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    config = resolve_config(args)
    graph = _graph(args)
    report = cross_validate(graph, config, k=args.folds, seed=config.seed, jobs=args.jobs)
    write_metrics_csv(report, args.out)
    m = report.mean
    log.info("mean P=%.4f R=%.4f F=%.4f%s", m.precision, m.recall, m.f, " (partial)" if report.partial else "")
    return EXIT_OK


def cmd_importance(args) -> int:
    graph = _graph(args)
    contracts = [(a.opcodes, a.label) for a in graph.contracts() if a.label is not None]
    rows = tfidf_opcode_importance(contracts, top=args.top, smooth=args.smooth)
    write_importance_csv(rows, args.out)
    log.info("wrote %d opcodes to %s", len(rows), args.out)
    return EXIT_OK


def cmd_project(args) -> int:
    bundle = ModelBundle.load(args.model)
    graph = _graph(args)
    labels = graph.labeled()
    ids = _read_ids(args.ids) or list(labels)
    missing = [i for i in ids if i not in graph.accounts]
    if missing:
        raise DataError(f"unknown account ids: {missing[:5]}")
    proj = project_2d(node_embeddings(bundle, graph, ids), seed=args.seed)
    if proj.degenerate:
        log.warning("embeddings span fewer than two dimensions")
    write_projection_csv(ids, proj, labels, args.out)
    if args.svg:
        write_projection_svg(ids, proj, labels, args.svg)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "importance": cmd_importance,
    "project": cmd_project,
}


def _setup_logging() -> None:
    level = os.environ.get("DSPSD_LOG", "info").strip().lower()
    if level not in LOG_LEVELS:
        raise ConfigError(f"DSPSD_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    root = logging.getLogger("dspsd")
    root.handlers[:] = [logging.StreamHandler(sys.stderr)]
    root.handlers[0].setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.setLevel(LOG_LEVELS[level])


def run(argv=None) -> int:
    parser = build_parser()
    try:
        _setup_logging()
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"dspsd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, KeyError) as exc:
        print(f"dspsd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"dspsd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

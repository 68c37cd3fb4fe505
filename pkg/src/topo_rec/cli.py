"""Command-line entry point: ``topo-rec <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .characteristics import compute_all
from .config import load_config
from .errors import TopoRecError
from .graph import largest_connected_component, read_graph, write_graph
from .pipeline import Pipeline, configure_logging, degree_fit_tables, write_degree_fit

log = logging.getLogger("topo_rec")

SUBCOMMANDS = {
    "ingest": "validate a dataset and extract its largest connected component",
    "sample": "generate sub-datasets by node/edge dropout",
    "characterize": "compute the 11 characteristics of every sample (or of --input)",
    "train": "train and evaluate the configured models on every sample",
    "explain": "fit the explanatory regression on records.csv",
    "alpha-mix": "refit the regression on node/edge-dropout blends",
    "degree-fit": "fit power-law and exponential degree distributions",
    "run": "all stages in order",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topo-rec", description="Dataset topology vs. recommender accuracy.")
    sub = parser.add_subparsers(dest="command", metavar="<subcommand>")
    sub.required = True
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="YAML pipeline configuration")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--workers", type=int, help="override the worker count")
        p.add_argument("--output", type=Path, help="override the output directory")
        if name in ("ingest", "characterize", "degree-fit"):
            p.add_argument("--input", type=Path,
                           help="operate on a single interaction TSV instead of the pipeline")
    return parser


def _pipeline(args) -> Pipeline:
    if args.config is None:
        raise TopoRecError(f"{args.command} needs --config (or --input where supported)")
    cfg = load_config(args.config).with_overrides(args.seed, args.workers, args.output)
    return Pipeline(cfg)


def _single_file(args) -> int:
    graph = read_graph(args.input)
    if args.command == "ingest":
        lcc = largest_connected_component(graph)
        if args.output is not None:
            args.output.mkdir(parents=True, exist_ok=True)
            write_graph(lcc, args.output / "graph.tsv")
        print(json.dumps({"raw": [graph.user_count, graph.item_count, graph.edge_count],
                          "component": [lcc.user_count, lcc.item_count, lcc.edge_count]}, sort_keys=True))
        return 0
    if args.command == "characterize":
        text = compute_all(graph).to_csv()
        if args.output is not None:
            args.output.mkdir(parents=True, exist_ok=True)
            (args.output / "characteristics.csv").write_text(text, encoding="utf-8")
        sys.stdout.write(text)
        return 0
    # degree-fit
    result = degree_fit_tables(graph)
    if args.output is not None:
        args.output.mkdir(parents=True, exist_ok=True)
        write_degree_fit(result, args.output / "degree_fit.csv", args.output / "degree_fit.json")
    print(json.dumps(result["summary"], indent=2, sort_keys=True))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "input", None) is not None:
            return _single_file(args)
        pipe = _pipeline(args)
        cmd = args.command
        if cmd == "ingest":
            g = pipe.ingest()
            print(f"ingested {g!r} -> {pipe.layout.dataset_graph}")
        elif cmd == "sample":
            pipe.sample()
        elif cmd == "characterize":
            pipe.characterize()
        elif cmd == "train":
            pipe.train()
            print(pipe.layout.records)
        elif cmd == "explain":
            print(json.dumps(pipe.explain(), indent=2, sort_keys=True))
        elif cmd == "alpha-mix":
            pipe.alpha_mix()
            print(pipe.layout.alpha_mix / "summary.csv")
        elif cmd == "degree-fit":
            print(json.dumps(pipe.degree_fit(), indent=2, sort_keys=True))
        elif cmd == "run":
            print(pipe.run())
    except (TopoRecError, OSError) as exc:
        print(f"topo-rec {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

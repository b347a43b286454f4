"""Command-line interface: generate, build, query, exact, stats, bench,
insert, delete."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import BuildConfig
from .dataset import load_series, read_series
from .evaluation import generate_random_walk, run_benchmark
from .index import build_index, index_stats, load_index
from .query import (
    exact_search,
    extended_approx_search,
    leaf_bound_histogram,
    leaf_bound_table,
)
from .updates import delete_series, insert_series

# distinct nonzero statuses per failure class
EXIT_USAGE = 2
EXIT_INVARIANT = 3
EXIT_IO = 4
EXIT_NOT_FOUND = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_config_flags(p):
    p.add_argument("--length", "-n", type=int, required=True,
                   help="series length")
    p.add_argument("--width", type=int, default=16, help="PAA segments")
    p.add_argument("--bits", type=int, default=8, help="bits per SAX symbol")
    p.add_argument("--threshold", type=int, default=10000, help="leaf capacity")
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--fill-low", type=float, default=0.5)
    p.add_argument("--fill-high", type=float, default=3.0)
    p.add_argument("--small-node", type=float, default=1.0,
                   help="small-leaf threshold as a multiple of the capacity")
    p.add_argument("--fuzzy", type=float, default=None,
                   help="boundary fraction enabling series duplication")
    p.add_argument("--buffer", type=int, default=100_000,
                   help="series held in memory per build batch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", choices=["adaptive", "binary"],
                   default="adaptive")
    p.add_argument("--no-packing", action="store_true")


def _config_from(args) -> BuildConfig:
    return BuildConfig(
        n=args.length, w=args.width, b=args.bits, th=args.threshold,
        fill_low=args.fill_low, fill_high=args.fill_high, alpha=args.alpha,
        rho=args.rho, small_node_ratio=args.small_node, fuzzy=args.fuzzy,
        buffer_series=args.buffer, rng_seed=args.seed,
        split_strategy=args.strategy, packing=not args.no_packing,
    )


def _add_query_flags(p):
    p.add_argument("index", help="index directory")
    p.add_argument("queries", help="query series file (same binary format)")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--distance", choices=["ed", "dtw"], default="ed")
    p.add_argument("--window", type=int, default=0, help="DTW band radius")


def build_parser() -> _Parser:
    parser = _Parser(prog="saxtree")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a random-walk dataset")
    p.add_argument("path")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--length", "-n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("build", help="build an index over a dataset")
    p.add_argument("dataset")
    p.add_argument("index", help="output index directory")
    _add_config_flags(p)

    p = sub.add_parser("query", help="budgeted approximate kNN")
    _add_query_flags(p)
    p.add_argument("--nodes", type=int, default=1, help="leaf visit budget")

    p = sub.add_parser("exact", help="exact kNN")
    _add_query_flags(p)

    p = sub.add_parser("stats", help="print index statistics")
    p.add_argument("index")
    p.add_argument("--query-file", default=None,
                   help="also print per-leaf lower bounds for the first query")
    p.add_argument("--distance", choices=["ed", "dtw"], default="ed")
    p.add_argument("--window", type=int, default=0)

    p = sub.add_parser("bench", help="build variants and benchmark them")
    p.add_argument("dataset")
    p.add_argument("queries")
    p.add_argument("workdir")
    _add_config_flags(p)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--budgets", type=int, nargs="+", default=[1, 5, 25])
    p.add_argument("--distance", choices=["ed", "dtw"], default="ed")
    p.add_argument("--window", type=int, default=0)

    p = sub.add_parser("insert", help="insert series from a file")
    p.add_argument("index")
    p.add_argument("series_file")

    p = sub.add_parser("delete", help="delete one series")
    p.add_argument("index")
    p.add_argument("--series-file", default=None,
                   help="file holding the series to delete (first one used)")
    p.add_argument("--ordinal", type=int, default=None)

    return parser


def _print_result(res, as_json: bool = True):
    out = {
        "ordinals": [int(o) for o in res.ordinals],
        "distances": [float(d) for d in res.distances],
        "leaves_visited": res.leaves_visited,
        "pruning_ratio": res.pruning_ratio,
    }
    print(json.dumps(out))


def _run(args) -> int:
    if args.command == "generate":
        generate_random_walk(args.path, args.count, args.length, args.seed)
        print(f"wrote {args.count} series of length {args.length} to {args.path}")
        return 0

    if args.command == "build":
        config = _config_from(args)
        index = build_index(args.dataset, config, args.index)
        stats = index_stats(index)
        print(json.dumps(stats))
        return 0

    if args.command in ("query", "exact"):
        index = load_index(args.index)
        queries = load_series(args.queries, index.config.n)
        for q in queries:
            if args.command == "query":
                res = extended_approx_search(index, q, args.k, nbr=args.nodes,
                                             distance=args.distance,
                                             window=args.window)
            else:
                res = exact_search(index, q, args.k, distance=args.distance,
                                   window=args.window)
            _print_result(res)
        return 0

    if args.command == "stats":
        index = load_index(args.index)
        stats = index_stats(index)
        print(json.dumps({**stats, "fill_factor": round(stats["fill_factor"], 3)}))
        counts, edges, unbounded = leaf_bound_histogram(index)
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            print(f"ub [{lo:8.3f}, {hi:8.3f})\t{int(c)}")
        print(f"ub unbounded\t{unbounded}")
        if args.query_file:
            q = read_series(args.query_file, index.config.n, 0, 1)[0]
            for leaf, lb in leaf_bound_table(index, q, args.distance, args.window):
                print(f"leaf {leaf.file_id}\tsize {leaf.size}\tlb {lb:.4f}")
        return 0

    if args.command == "bench":
        config = _config_from(args)
        queries = load_series(args.queries, config.n)
        _, table = run_benchmark(args.dataset, queries, config, args.workdir,
                                 k=args.k, budgets=tuple(args.budgets),
                                 distance=args.distance, window=args.window)
        print(table)
        return 0

    if args.command == "insert":
        index = load_index(args.index)
        series = load_series(args.series_file, index.config.n)
        for s in series:
            ordinal = insert_series(index, s)
            print(f"inserted ordinal {ordinal}")
        index.save()
        return 0

    if args.command == "delete":
        index = load_index(args.index)
        series = None
        if args.series_file is not None:
            series = read_series(args.series_file, index.config.n, 0, 1)[0]
        if series is None and args.ordinal is None:
            print("delete needs --series-file or --ordinal", file=sys.stderr)
            return EXIT_USAGE
        ordinal = delete_series(index, series, ordinal=args.ordinal)
        index.save()
        print(f"deleted ordinal {ordinal}")
        return 0

    return EXIT_USAGE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _run(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

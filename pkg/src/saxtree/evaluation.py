"""Dataset generation, brute-force ground truth, accuracy metrics, benchmark."""

from __future__ import annotations

import dataclasses
import heapq
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import BuildConfig
from .dataset import load_series
from .index import build_index, index_stats
from .query import exact_search, extended_approx_search
from .summarization import (
    combined_dtw_bound,
    dtw_distance,
    query_envelope,
    series_envelopes,
)

__all__ = [
    "QuerySet",
    "BenchReport",
    "generate_random_walk",
    "random_walk_series",
    "brute_force_knn",
    "build_query_set",
    "average_precision",
    "map_score",
    "avg_error_ratio",
    "run_benchmark",
]


@dataclass
class QuerySet:
    """Query series with brute-force ground truth, sorted by distance."""

    queries: np.ndarray
    truth_ordinals: list = field(default_factory=list)
    truth_distances: list = field(default_factory=list)
    k: int = 0
    distance: str = "ed"
    window: int = 0


@dataclass
class BenchReport:
    """Per-variant benchmark statistics."""

    variant: str
    build_seconds: float
    fill_factor: float
    leaf_count: int
    node_count: int
    map_by_budget: dict = field(default_factory=dict)
    error_ratio_by_budget: dict = field(default_factory=dict)
    exact_map: float = 1.0
    exact_mean_seconds: float = 0.0
    approx_mean_seconds: float = 0.0
    pruning_ratio: float = 0.0
    notes: list = field(default_factory=list)


def random_walk_series(count: int, n: int, seed: int) -> np.ndarray:
    """Z-normalized cumulative sums of standard-Gaussian steps."""
    if count < 1 or n < 1:
        raise ValueError("count and series length must be positive")
    rng = np.random.default_rng(seed)
    steps = rng.standard_normal((count, n))
    walks = np.cumsum(steps, axis=1)
    mean = walks.mean(axis=1, keepdims=True)
    std = walks.std(axis=1, keepdims=True)
    std[std < 1e-12] = 1.0
    return (walks - mean) / std


def generate_random_walk(path, count: int, n: int, seed: int,
                         batch: int = 50_000) -> Path:
    """Write ``count`` random-walk series to a float32 dataset file.

    Deterministic per seed and independent of the batch size.
    """
    path = Path(path)
    rng = np.random.default_rng(seed)
    with open(path, "wb") as fh:
        done = 0
        while done < count:
            take = min(batch, count - done)
            steps = rng.standard_normal((take, n))
            walks = np.cumsum(steps, axis=1)
            mean = walks.mean(axis=1, keepdims=True)
            std = walks.std(axis=1, keepdims=True)
            std[std < 1e-12] = 1.0
            ((walks - mean) / std).astype("<f4").tofile(fh)
            done += take
    return path


def brute_force_knn(data, query, k: int, distance: str = "ed",
                    window: int = 0, data_envelopes=None):
    """Exhaustive kNN over a series matrix; ties broken by ascending ordinal.

    Returns (ordinals, distances) sorted ascending by (distance, ordinal).
    ``data_envelopes`` can carry precomputed :func:`series_envelopes` of
    ``data`` to amortize the DTW prefilter over many queries.
    """
    q = np.asarray(query, dtype=np.float64)
    if distance == "ed":
        x = np.asarray(data, dtype=np.float64)
    else:
        x = np.asarray(data)
    if x.ndim != 2 or x.shape[1] != q.shape[0]:
        raise ValueError("data must be a (count, n) matrix matching the query")
    k = min(k, len(x))
    if distance == "ed":
        diff = x - q
        dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        order = np.lexsort((np.arange(len(x)), dists))[:k]
        return order.astype(np.int64), dists[order]
    if distance != "dtw":
        raise ValueError(f"unknown distance {distance!r}")

    if data_envelopes is None:
        data_envelopes = series_envelopes(x, window)
    lbs = combined_dtw_bound(q, query_envelope(q, window), x, data_envelopes)
    order = np.lexsort((np.arange(len(x)), lbs))
    heap: list = []  # (-dist, -ordinal)
    kth = np.inf
    for i in order:
        if lbs[i] > kth:
            break
        d = dtw_distance(x[i], q, window, cutoff=kth)
        entry = (-d, -int(i))
        if len(heap) < k:
            heapq.heappush(heap, entry)
        elif entry > heap[0]:
            heapq.heapreplace(heap, entry)
        if len(heap) == k:
            kth = -heap[0][0]
    pairs = sorted((-d, -o) for d, o in heap)
    return (np.array([p[1] for p in pairs], dtype=np.int64),
            np.array([p[0] for p in pairs]))


def build_query_set(data, queries, k: int, distance: str = "ed",
                    window: int = 0) -> QuerySet:
    qs = QuerySet(np.asarray(queries, dtype=np.float64), k=k,
                  distance=distance, window=window)
    envs = None
    if distance == "dtw" and len(qs.queries) > 1:
        envs = series_envelopes(np.asarray(data), window)
    for q in qs.queries:
        ords, dists = brute_force_knn(data, q, k, distance, window, envs)
        qs.truth_ordinals.append(ords)
        qs.truth_distances.append(dists)
    return qs


_TIE_EPS = 1e-9


def average_precision(result_ordinals, result_distances, truth_ordinals,
                      truth_distances, k: int) -> float:
    """AP of one query against the tie-class of the true kNN.

    A returned series is relevant when its ordinal is a true neighbor or
    its actual distance ties the k-th true distance.
    """
    truth_set = set(int(o) for o in truth_ordinals[:k])
    kth = float(truth_distances[min(k, len(truth_distances)) - 1])
    rel = np.zeros(k)
    for i in range(min(k, len(result_ordinals))):
        o = int(result_ordinals[i])
        d = float(result_distances[i])
        if o in truth_set or d <= kth + _TIE_EPS:
            rel[i] = 1.0
    precision = np.cumsum(rel) / np.arange(1, k + 1)
    return float(np.sum(precision * rel) / k)


def map_score(results, truth: QuerySet, k: int) -> float:
    """Mean average precision over aligned result/ground-truth lists."""
    if len(results) != len(truth.truth_ordinals):
        raise ValueError("results and ground truth are not aligned")
    if k != truth.k:
        raise ValueError(f"ground truth was computed for k={truth.k}, not {k}")
    aps = [
        average_precision(res.ordinals, res.distances,
                          truth.truth_ordinals[i], truth.truth_distances[i], k)
        for i, res in enumerate(results)
    ]
    return float(np.mean(aps))


def avg_error_ratio(results, truth: QuerySet, k: int):
    """Mean over queries of the mean approximate/true distance ratio.

    Queries whose ground truth contains a zero distance unmatched by a
    zero approximate distance are excluded; returns (ratio, excluded).
    """
    ratios = []
    excluded = 0
    for res, t_d in zip(results, truth.truth_distances):
        t = np.asarray(t_d[:k], dtype=np.float64)
        a = np.full(k, np.inf)
        a[: min(k, len(res.distances))] = res.distances[:k]
        if np.any(t <= 0):
            zero = t <= 0
            if np.all(a[zero] <= 0):
                terms = np.ones(k)
                terms[~zero] = a[~zero] / t[~zero]
                ratios.append(float(np.mean(terms)))
            else:
                excluded += 1
            continue
        ratios.append(float(np.mean(a / t)))
    ratio = float(np.mean(ratios)) if ratios else float("nan")
    return ratio, excluded


def run_benchmark(dataset_path, queries, base_config: BuildConfig, workdir,
                  k: int = 10, budgets=(1, 5, 25), distance: str = "ed",
                  window: int = 0, fuzzy: float = 0.1):
    """Build the adaptive, duplicated and binary-split variants and measure
    accuracy, speed and structure statistics on each.

    Returns (reports, table_text); also writes ``report.jsonl`` under
    ``workdir``.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    data = load_series(dataset_path, base_config.n)
    truth = build_query_set(data, queries, k, distance, window)

    variants = [
        ("adaptive", dataclasses.replace(base_config, fuzzy=None)),
        ("adaptive+fuzzy", dataclasses.replace(base_config, fuzzy=fuzzy)),
        ("binary", dataclasses.replace(base_config, split_strategy="binary",
                                       packing=False, fuzzy=None)),
    ]
    reports = []
    for name, config in variants:
        t0 = time.perf_counter()
        index = build_index(dataset_path, config, workdir / name.replace("+", "_"))
        build_s = time.perf_counter() - t0
        stats = index_stats(index)
        report = BenchReport(variant=name, build_seconds=build_s,
                             fill_factor=stats["fill_factor"],
                             leaf_count=stats["leaf_count"],
                             node_count=stats["node_count"])
        for nbr in budgets:
            t0 = time.perf_counter()
            results = [extended_approx_search(index, q, k, nbr=nbr,
                                              distance=distance, window=window)
                       for q in truth.queries]
            elapsed = (time.perf_counter() - t0) / len(truth.queries)
            report.map_by_budget[nbr] = map_score(results, truth, k)
            ratio, excluded = avg_error_ratio(results, truth, k)
            report.error_ratio_by_budget[nbr] = ratio
            if excluded:
                report.notes.append(
                    f"{excluded} queries excluded from the error ratio at "
                    f"budget {nbr} (zero ground-truth distance)")
            if nbr == budgets[0]:
                report.approx_mean_seconds = elapsed
        t0 = time.perf_counter()
        exact = [exact_search(index, q, k, distance=distance, window=window)
                 for q in truth.queries]
        report.exact_mean_seconds = (time.perf_counter() - t0) / len(truth.queries)
        report.exact_map = map_score(exact, truth, k)
        report.pruning_ratio = float(np.mean([r.pruning_ratio for r in exact]))
        reports.append(report)

    with open(workdir / "report.jsonl", "w") as fh:
        for report in reports:
            fh.write(json.dumps(dataclasses.asdict(report)) + "\n")
    return reports, format_report(reports, budgets)


def format_report(reports, budgets) -> str:
    headers = (["variant", "build_s", "fill", "leaves", "prune", "exact_map"]
               + [f"map@{n}" for n in budgets])
    rows = []
    for r in reports:
        rows.append([r.variant, f"{r.build_seconds:.2f}", f"{r.fill_factor:.3f}",
                     str(r.leaf_count), f"{r.pruning_ratio:.3f}",
                     f"{r.exact_map:.3f}"]
                    + [f"{r.map_by_budget[n]:.3f}" for n in budgets])
    widths = [max(len(h), *(len(row[i]) for row in rows))
              for i, h in enumerate(headers)]
    def fmt(row):
        return "  ".join(cell.ljust(w) for cell, w in zip(row, widths))
    return "\n".join([fmt(headers)] + [fmt(row) for row in rows])

"""Adaptive choice of split segments for an overflowing node.

A split plan is a subset of promotable segments; every series in the node
contributes one extra bit per chosen segment, and the concatenated bits
(ascending segment order, first segment most significant) form the child
routing code ("sid").  Plans are scored by a proximity term (variance of
region midpoints on the chosen segments) plus a compactness term (fill
factors of the prospective children).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .summarization import Breakpoints, ISaxWord

__all__ = [
    "SplitPlan",
    "FanoutRange",
    "UnsplittableNodeError",
    "promotable_segments",
    "segment_variances",
    "projected_variance",
    "fanout_range",
    "base_distribution",
    "project_distribution",
    "score_plan",
    "find_optimal_plan",
    "promote_isax",
    "promote_sids",
    "binary_baseline_plan",
]


class UnsplittableNodeError(Exception):
    """No segment of the node can be promoted any further."""


@dataclass(frozen=True)
class SplitPlan:
    segments: tuple  # 0-based segment ids, ascending
    score: float


class FanoutRange(NamedTuple):
    lam_min: int
    lam_max: int


def promotable_segments(node_isax: ISaxWord, b: int) -> list:
    return [j for j, ln in enumerate(node_isax.lengths) if ln < b]


def segment_variances(sax_words, node_isax: ISaxWord, breakpoints: Breakpoints) -> np.ndarray:
    """Per-segment population variance of the next-bit region midpoints.

    For each series, the value on segment j is the midpoint of the region
    the series would fall into if segment j were promoted by one bit.
    Segments already at full cardinality use the full-symbol region, which
    always yields zero variance inside a node.
    """
    sax = np.asarray(sax_words)
    if sax.size == 0:
        raise ValueError("cannot compute segment statistics of an empty node")
    b = breakpoints.b
    w = node_isax.w
    out = np.empty(w)
    for j in range(w):
        level = min(node_isax.lengths[j] + 1, b)
        prefixes = sax[:, j].astype(np.int64) >> (b - level)
        out[j] = np.var(breakpoints.midpoint(prefixes, level))
    return out


def projected_variance(plan, stats) -> float:
    """Variance of the projected midpoint vectors: the per-segment sum."""
    plan = tuple(plan)
    if not plan:
        raise ValueError("plan must choose at least one segment")
    return float(np.sum(np.asarray(stats)[list(plan)]))


def fanout_range(c_n: int, th: int, fill_low: float, fill_high: float, w: int) -> FanoutRange:
    """Fanout band keeping the average child fill factor near [fill_low, fill_high]."""
    if c_n <= th:
        raise ValueError("node does not overflow, no split needed")
    lam_min = max(1, math.ceil(math.log2(c_n / (fill_high * th))))
    lam_max = min(w, math.floor(math.log2(c_n / (fill_low * th))))
    if lam_min > lam_max:
        lam_max = lam_min
    return FanoutRange(lam_min, lam_max)


def _next_bits(sax, node_isax: ISaxWord, segments, b: int) -> np.ndarray:
    """Next-bit matrix (n_series, len(segments)) for the given segments."""
    sax = np.asarray(sax)
    cols = []
    for seg in segments:
        ln = node_isax.lengths[seg]
        if ln >= b:
            raise UnsplittableNodeError(f"segment {seg} is already at full cardinality")
        cols.append((sax[:, seg].astype(np.int64) >> (b - ln - 1)) & 1)
    return np.stack(cols, axis=1)


def _bits_to_sids(bits: np.ndarray) -> np.ndarray:
    lam = bits.shape[1]
    weights = 1 << np.arange(lam - 1, -1, -1, dtype=np.int64)
    return bits @ weights


def base_distribution(sax_words, node_isax: ISaxWord, b: int) -> dict:
    """Child sizes for the widest plan: one next bit per promotable segment."""
    sax = np.asarray(sax_words)
    if sax.size == 0:
        raise ValueError("cannot compute a size distribution of an empty node")
    segs = promotable_segments(node_isax, b)
    if not segs:
        raise UnsplittableNodeError("no promotable segment remains")
    sids = _bits_to_sids(_next_bits(sax, node_isax, segs, b))
    uniq, counts = np.unique(sids, return_counts=True)
    return {int(s): int(c) for s, c in zip(uniq, counts)}


def project_distribution(base: dict, base_plan, sub_plan) -> dict:
    """Fold a distribution over ``base_plan`` down to ``sub_plan``.

    Each base sid contributes its count to the sid obtained by keeping only
    the bit positions of ``sub_plan``.
    """
    base_plan = tuple(base_plan)
    sub_plan = tuple(sub_plan)
    if not set(sub_plan) <= set(base_plan):
        raise ValueError("sub-plan must be a subset of the base plan")
    positions = [base_plan.index(seg) for seg in sub_plan]
    width = len(base_plan)
    out: dict = {}
    for sid, count in base.items():
        new_sid = 0
        for pos in positions:
            new_sid = (new_sid << 1) | ((sid >> (width - 1 - pos)) & 1)
        out[new_sid] = out.get(new_sid, 0) + count
    return out


def _dist_array(dist, lam: int) -> np.ndarray:
    if isinstance(dist, dict):
        arr = np.zeros(1 << lam, dtype=np.int64)
        for sid, count in dist.items():
            arr[sid] = count
        return arr
    return np.asarray(dist, dtype=np.int64)


def score_plan(plan, dist, stats, th: int, alpha: float) -> float:
    """Objective value of a plan: proximity term plus weighted compactness.

    ``dist`` holds the prospective child sizes (dict keyed by sid, or a
    dense array of length 2^|plan|); absent children count as empty and do
    take part in the fill-factor statistics.
    """
    plan = tuple(plan)
    lam = len(plan)
    sizes = _dist_array(dist, lam)
    var = projected_variance(plan, stats)
    proximity = math.exp(math.sqrt(var / lam))
    fill = sizes / th
    overflow_ratio = float(np.count_nonzero(sizes > th)) / sizes.size
    sigma = float(np.std(fill))
    compactness = alpha * math.exp(-(1.0 + overflow_ratio) * sigma)
    return proximity + compactness


def _marginalize(sizes: np.ndarray, lam: int, drop_pos: int) -> np.ndarray:
    """Drop one bit position from a dense child-size array."""
    return sizes.reshape((2,) * lam).sum(axis=drop_pos).reshape(-1)


def find_optimal_plan(
    sax_words,
    node_isax: ISaxWord,
    breakpoints: Breakpoints,
    th: int,
    fill_low: float,
    fill_high: float,
    alpha: float,
) -> SplitPlan:
    """Best-scoring plan among all segment subsets inside the fanout band.

    Explores the subset lattice depth-first from the largest fanout down,
    reusing each visited plan's size distribution for its sub-plans; the
    result equals exhaustive enumeration over the restricted space.  Score
    ties resolve to the lexicographically smallest segment list.
    """
    sax = np.asarray(sax_words)
    b = breakpoints.b
    c_n = sax.shape[0]
    if c_n <= th:
        raise ValueError("node does not overflow, no split needed")
    segs = promotable_segments(node_isax, b)
    if not segs:
        raise UnsplittableNodeError("no promotable segment remains")
    stats = segment_variances(sax, node_isax, breakpoints)
    lam_min, lam_max = fanout_range(c_n, th, fill_low, fill_high, node_isax.w)
    lam_max = min(lam_max, len(segs))
    lam_min = min(lam_min, lam_max)

    base_bits = _next_bits(sax, node_isax, segs, b)
    base_sids = _bits_to_sids(base_bits)
    uniq, counts = np.unique(base_sids, return_counts=True)
    m = len(segs)
    # bit value of every unique sid at every base position, reused per plan
    shifts = np.arange(m - 1, -1, -1, dtype=np.int64)
    bitcols = (uniq[:, None] >> shifts) & 1

    best: list = [-math.inf, None]
    visited: set = set()

    def consider(plan, sizes):
        score = score_plan(plan, sizes, stats, th, alpha)
        if score > best[0] or (score == best[0] and plan < best[1]):
            best[0] = score
            best[1] = plan

    def descend(plan, sizes, lam):
        if lam - 1 < lam_min:
            return
        for drop in range(lam):
            sub = plan[:drop] + plan[drop + 1 :]
            if sub in visited:
                continue
            visited.add(sub)
            sub_sizes = _marginalize(sizes, lam, drop)
            consider(sub, sub_sizes)
            descend(sub, sub_sizes, lam - 1)

    for positions in combinations(range(m), lam_max):
        plan = tuple(segs[p] for p in positions)
        if plan in visited:
            continue
        visited.add(plan)
        weights = 1 << np.arange(lam_max - 1, -1, -1, dtype=np.int64)
        plan_sids = bitcols[:, list(positions)] @ weights
        sizes = np.bincount(plan_sids, weights=counts, minlength=1 << lam_max).astype(np.int64)
        consider(plan, sizes)
        descend(plan, sizes, lam_max)

    return SplitPlan(segments=best[1], score=best[0])


def promote_isax(node_isax: ISaxWord, sax, plan, b: int):
    """Route one series: its sid under ``plan`` and the child's iSAX word."""
    sax = np.asarray(sax)
    sid = 0
    child = node_isax
    for seg in plan:
        ln = node_isax.lengths[seg]
        if ln >= b:
            raise UnsplittableNodeError(f"segment {seg} is already at full cardinality")
        bit = int(sax[seg]) >> (b - ln - 1) & 1
        sid = (sid << 1) | bit
        child = child.extend(seg, bit)
    return sid, child


def promote_sids(sax_words, node_isax: ISaxWord, plan, b: int) -> np.ndarray:
    """Vectorized sid computation for a batch of SAX words."""
    return _bits_to_sids(_next_bits(np.asarray(sax_words), node_isax, plan, b))


def child_isax(node_isax: ISaxWord, plan, sid: int, b: int) -> ISaxWord:
    """iSAX word of the child reached through ``sid`` under ``plan``."""
    child = node_isax
    lam = len(plan)
    for i, seg in enumerate(plan):
        bit = (sid >> (lam - 1 - i)) & 1
        child = child.extend(seg, bit)
    return child


def binary_baseline_plan(sax_words, node_isax: ISaxWord, b: int) -> SplitPlan:
    """Single-segment plan with the most balanced next-bit split.

    Comparison baseline: mirrors the balance-seeking binary strategy of
    classic SAX trees.  Ties resolve to the lowest segment id.
    """
    sax = np.asarray(sax_words)
    segs = promotable_segments(node_isax, b)
    if not segs:
        raise UnsplittableNodeError("no promotable segment remains")
    c_n = sax.shape[0]
    bits = _next_bits(sax, node_isax, segs, b)
    ones = bits.sum(axis=0)
    imbalance = np.abs(c_n - 2 * ones)
    pick = int(np.argmin(imbalance))  # first minimum: lowest segment id
    return SplitPlan(segments=(segs[pick],), score=-float(imbalance[pick]))

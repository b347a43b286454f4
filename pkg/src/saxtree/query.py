"""kNN search over the index: approximate, budgeted, and exact."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .index import Index, LeafNode, _sid_of
from .summarization import (
    combined_dtw_bound,
    compute_paa,
    dtw_distance,
    lower_bound_ed,
    paa_to_sax,
    query_envelope,
    series_envelopes,
)

__all__ = [
    "KnnResult",
    "approx_search",
    "extended_approx_search",
    "exact_search",
    "node_lower_bound",
    "leaf_bound_table",
    "leaf_bound_histogram",
]


@dataclass
class KnnResult:
    """Neighbors sorted by ascending (distance, ordinal), plus search stats."""

    ordinals: np.ndarray
    distances: np.ndarray
    leaves_visited: int = 0
    series_compared: int = 0
    pruning_ratio: float = 0.0
    stats: dict = field(default_factory=dict)


class _Metric:
    """Per-query state: summaries, node lower bounds, leaf scans."""

    def __init__(self, index: Index, query, distance: str, window: int):
        if distance not in ("ed", "dtw"):
            raise ValueError(f"unknown distance {distance!r}")
        config = index.config
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (config.n,):
            raise ValueError(f"query must have shape ({config.n},)")
        self.distance = distance
        self.window = int(window)
        self.query = q
        self.bps = index.breakpoints
        self.n = config.n
        self.w = config.w
        self.paa = compute_paa(q, config.w)
        self.sax = paa_to_sax(self.paa, self.bps)
        if distance == "dtw":
            if not 0 <= self.window < config.n:
                raise ValueError("window must be in [0, n)")
            self.lo_env, self.up_env = query_envelope(q, self.window)
            self.paa_env_lo = compute_paa(self.lo_env, config.w)
            self.paa_env_hi = compute_paa(self.up_env, config.w)

    def node_lb(self, node) -> float:
        if self.distance == "ed":
            return lower_bound_ed(node.isax, self.paa, self.n, self.bps)
        lo, hi = self.bps.region(node.isax.prefixes, node.isax.lengths)
        gaps = np.maximum(np.maximum(lo - self.paa_env_hi, self.paa_env_lo - hi), 0.0)
        return math.sqrt(self.n / self.w * float(np.sum(gaps * gaps)))

    def scan_leaf(self, index: Index, leaf: LeafNode, topk: "_TopK") -> int:
        """Fold a leaf's live records into the running top-k; returns the
        number of full distance computations."""
        recs = index.store.read(leaf.file_id)
        live = ~leaf.deleted[: len(recs)]
        if not np.any(live):
            return 0
        vals = recs["values"][live].astype(np.float64)
        ords = recs["ordinal"][live].astype(np.int64)
        if self.distance == "ed":
            diff = vals - self.query
            dists = np.sqrt(np.einsum("ij,ij->i", diff, diff))
            for i in np.flatnonzero(dists <= topk.kth()):
                topk.offer(float(dists[i]), int(ords[i]))
            return len(vals)
        lbs = combined_dtw_bound(self.query, (self.lo_env, self.up_env),
                                 vals, series_envelopes(vals, self.window))
        compared = 0
        for i in np.argsort(lbs, kind="stable"):
            if lbs[i] > topk.kth():
                break
            dist = dtw_distance(vals[i], self.query, self.window,
                                cutoff=topk.kth())
            compared += 1
            if dist <= topk.kth():
                topk.offer(dist, int(ords[i]))
        return compared


class _TopK:
    """Bounded result set; ties at the kth distance keep the lowest ordinal.

    Ordinals are unique in the set, so a series duplicated across leaves is
    reported once.
    """

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.k = k
        self._heap: list = []       # (-dist, -ordinal) max-heap on distance
        self._members: set = set()

    def kth(self) -> float:
        if len(self._heap) < self.k:
            return math.inf
        return -self._heap[0][0]

    def offer(self, dist: float, ordinal: int) -> None:
        if ordinal in self._members:
            return
        entry = (-dist, -ordinal)
        if len(self._heap) < self.k:
            heapq.heappush(self._heap, entry)
            self._members.add(ordinal)
            return
        if entry > self._heap[0]:
            dropped = heapq.heapreplace(self._heap, entry)
            self._members.discard(-dropped[1])
            self._members.add(ordinal)

    def result(self) -> tuple:
        pairs = sorted((-d, -o) for d, o in self._heap)
        dists = np.array([p[0] for p in pairs])
        ords = np.array([p[1] for p in pairs], dtype=np.int64)
        return ords, dists


def node_lower_bound(index: Index, node, query, distance: str = "ed",
                     window: int = 0) -> float:
    """Distance lower bound from a query to any series under ``node``."""
    return _Metric(index, query, distance, window).node_lb(node)


def leaf_bound_table(index: Index, query, distance: str = "ed", window: int = 0):
    """(leaf, lower_bound) for every leaf, in tree pre-order."""
    metric = _Metric(index, query, distance, window)
    return [(leaf, metric.node_lb(leaf)) for leaf in index.leaves()]


def leaf_bound_histogram(index: Index, bins: int = 20):
    """Histogram of the worst-case intra-leaf distances across all leaves.

    Returns (counts, edges, unbounded) where ``unbounded`` counts leaves
    whose region touches infinity on some segment.
    """
    from .summarization import leaf_upper_bound

    bounds = np.array([
        leaf_upper_bound(leaf.isax, index.config.n, index.breakpoints)
        for leaf in index.leaves()
    ])
    finite = bounds[np.isfinite(bounds)]
    unbounded = int(len(bounds) - len(finite))
    if len(finite) == 0:
        return np.zeros(bins, dtype=np.int64), np.linspace(0.0, 1.0, bins + 1), unbounded
    counts, edges = np.histogram(finite, bins=bins)
    return counts, edges, unbounded


def _descend_child(node, sax, metric: _Metric, b: int):
    """The routing child for ``sax``; falls back to the nearest child by
    lower bound when the exact entry is missing."""
    child = node.routing.get(_sid_of(node, sax, b))
    if child is not None:
        return child
    best = None
    best_key = (math.inf, math.inf)
    for sid, cand in node.children():
        key = (metric.node_lb(cand), sid)
        if key < best_key:
            best, best_key = cand, key
    return best


def _subtree_leaves(node):
    """Leaves of a subtree in deterministic pre-order."""
    stack = [node]
    while stack:
        cur = stack.pop()
        if cur.is_leaf:
            yield cur
        else:
            children = [child for _, child in cur.children()]
            stack.extend(reversed(children))


def extended_approx_search(index: Index, query, k: int, nbr: int = 1,
                           distance: str = "ed", window: int = 0) -> KnnResult:
    """Approximate kNN visiting at most ``nbr`` leaves.

    Descends toward the query until the remaining subtree holds at most
    ``nbr`` leaves, then spends the leftover budget on that subtree first
    and on its siblings in ascending lower-bound order afterwards,
    scanning each chosen subtree's leaves in pre-order.  Visiting the
    on-path subtree first makes the visited leaf set grow monotonically
    with the budget.
    """
    if nbr < 1:
        raise ValueError("leaf budget must be at least 1")
    metric = _Metric(index, query, distance, window)
    b = index.config.b
    topk = _TopK(k)

    node = index.root
    parent = None
    while not node.is_leaf and node.leaf_count > nbr:
        nxt = _descend_child(node, metric.sax, metric, b)
        if nxt is None:
            break
        parent, node = node, nxt

    if parent is None and not node.is_leaf:
        # descent never left the root: rank the root's children directly
        ranked = [((metric.node_lb(child), sid), child)
                  for sid, child in node.children()]
        ranked.sort(key=lambda item: item[0])
        candidates = [child for _, child in ranked]
    elif parent is None:
        candidates = [node]
    else:
        ranked = []
        for sid, child in parent.children():
            if child is node:
                continue
            ranked.append(((metric.node_lb(child), sid), child))
        ranked.sort(key=lambda item: item[0])
        candidates = [node] + [child for _, child in ranked]

    visited = 0
    compared = 0
    seen = set()
    for cand in candidates:
        if visited >= nbr:
            break
        for leaf in _subtree_leaves(cand):
            if id(leaf) in seen:
                continue
            seen.add(id(leaf))
            if leaf.size == 0:
                continue  # dead leaves don't consume the budget
            compared += metric.scan_leaf(index, leaf, topk)
            visited += 1
            if visited >= nbr:
                break

    ords, dists = topk.result()
    return KnnResult(ords, dists, leaves_visited=visited, series_compared=compared)


def approx_search(index: Index, query, k: int, distance: str = "ed",
                  window: int = 0) -> KnnResult:
    """Single-leaf approximate kNN: route to the query's own leaf."""
    return extended_approx_search(index, query, k, nbr=1,
                                  distance=distance, window=window)


def exact_search(index: Index, query, k: int, distance: str = "ed",
                 window: int = 0, seed_nbr: int = 1) -> KnnResult:
    """Exact kNN: best-first traversal pruning subtrees whose lower bound
    strictly exceeds the current kth distance."""
    metric = _Metric(index, query, distance, window)
    topk = _TopK(k)
    compared = 0
    visited_ids = set()

    # seed the kth distance with a cheap approximate pass
    seed = extended_approx_search(index, query, k, nbr=seed_nbr,
                                  distance=distance, window=window)
    for dist, o in zip(seed.distances, seed.ordinals):
        topk.offer(float(dist), int(o))
    compared += seed.series_compared

    total_leaves = index.root.leaf_count if not index.root.is_leaf else 1
    heap = [(metric.node_lb(index.root), 0, index.root)]
    counter = 1
    visited = 0
    while heap:
        lb, _, node = heapq.heappop(heap)
        if lb > topk.kth():
            break
        if node.is_leaf:
            if id(node) in visited_ids:
                continue
            visited_ids.add(id(node))
            compared += metric.scan_leaf(index, node, topk)
            visited += 1
        else:
            for _, child in node.children():
                child_lb = metric.node_lb(child)
                if child_lb <= topk.kth():
                    heapq.heappush(heap, (child_lb, counter, child))
                    counter += 1

    ords, dists = topk.result()
    ratio = 1.0 - visited / total_leaves if total_leaves else 0.0
    return KnnResult(ords, dists, leaves_visited=visited, series_compared=compared,
                     pruning_ratio=ratio,
                     stats={"seed_leaves": seed.leaves_visited})

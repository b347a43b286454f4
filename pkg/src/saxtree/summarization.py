"""PAA / SAX / iSAX summarization and the distance bounds built on them.

Everything in this module is a pure function over immutable numpy inputs.
Symbols are unsigned integers in [0, 2^b); an iSAX segment is a
(prefix, bit-length) pair where bit-length 0 is the wildcard covering the
whole real line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.ndimage import maximum_filter1d, minimum_filter1d
from scipy.stats import norm

__all__ = [
    "Breakpoints",
    "ISaxWord",
    "get_breakpoints",
    "z_normalize",
    "compute_paa",
    "paa_to_sax",
    "lower_bound_ed",
    "lower_bound_dtw",
    "dtw_distance",
    "leaf_upper_bound",
    "query_envelope",
    "lb_keogh",
    "series_envelopes",
    "combined_dtw_bound",
]

_EPS_STD = 1e-12


class Breakpoints:
    """Standard-normal quantile breakpoints for cardinality 2^b.

    ``thresholds`` has 2^b - 1 strictly increasing values.  ``bounds``
    extends them with -inf/+inf so that the region of the full symbol ``v``
    is [bounds[v], bounds[v+1]).  ``pseudo`` replaces the infinities with
    +-beta (outermost finite breakpoint plus the mean finite-region width)
    so that region midpoints stay finite.
    """

    def __init__(self, b: int):
        if not 1 <= b <= 8:
            raise ValueError(f"bits per symbol must be in [1, 8], got {b}")
        self.b = b
        card = 1 << b
        qs = np.arange(1, card) / card
        self.thresholds = norm.ppf(qs)
        self.bounds = np.concatenate(([-np.inf], self.thresholds, [np.inf]))
        if card > 2:
            beta = self.thresholds[-1] + float(np.mean(np.diff(self.thresholds)))
        else:
            beta = 1.0  # b = 1: single breakpoint at 0, no finite region
        self.beta = beta
        self.pseudo = np.concatenate(([-beta], self.thresholds, [beta]))
        # midpoint of every (prefix, level) region, one table per level
        self._midpoints = []
        for level in range(b + 1):
            step = 1 << (b - level)
            edges = self.pseudo[::step]
            self._midpoints.append((edges[:-1] + edges[1:]) / 2.0)

    def region(self, prefix, length):
        """Half-open value region [lo, hi) of iSAX segments (vectorized)."""
        prefix = np.asarray(prefix, dtype=np.int64)
        length = np.asarray(length, dtype=np.int64)
        shift = self.b - length
        lo = self.bounds[prefix << shift]
        hi = self.bounds[(prefix + 1) << shift]
        return lo, hi

    def midpoint(self, prefix, length):
        """Region midpoint using the +-beta pseudo-boundaries (vectorized)."""
        prefix = np.asarray(prefix)
        if np.isscalar(length) or np.ndim(length) == 0:
            return self._midpoints[int(length)][prefix]
        out = np.empty(np.broadcast(prefix, length).shape)
        length = np.asarray(length)
        for lv in np.unique(length):
            m = length == lv
            out[m] = self._midpoints[int(lv)][prefix[m]]
        return out


@lru_cache(maxsize=None)
def get_breakpoints(b: int) -> Breakpoints:
    return Breakpoints(b)


@dataclass(frozen=True)
class ISaxWord:
    """Variable-cardinality SAX word: per-segment (prefix, bit-length)."""

    prefixes: tuple
    lengths: tuple

    @classmethod
    def root(cls, w: int) -> "ISaxWord":
        return cls((0,) * w, (0,) * w)

    @classmethod
    def from_arrays(cls, prefixes, lengths) -> "ISaxWord":
        return cls(tuple(int(p) for p in prefixes), tuple(int(x) for x in lengths))

    @property
    def w(self) -> int:
        return len(self.prefixes)

    def covers(self, sax: np.ndarray, b: int) -> bool:
        """True if every segment prefix is a prefix of the SAX symbol."""
        p = np.asarray(self.prefixes, dtype=np.int64)
        ln = np.asarray(self.lengths, dtype=np.int64)
        return bool(np.all((np.asarray(sax, dtype=np.int64) >> (b - ln)) == p))

    def extend(self, segment: int, bit: int) -> "ISaxWord":
        """Promote one segment by one bit."""
        prefixes = list(self.prefixes)
        lengths = list(self.lengths)
        prefixes[segment] = (prefixes[segment] << 1) | bit
        lengths[segment] += 1
        return ISaxWord(tuple(prefixes), tuple(lengths))


def z_normalize(series) -> np.ndarray:
    """Normalize to mean 0 / stddev 1; constant series map to all zeros."""
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot normalize an empty series")
    std = x.std()
    if std < _EPS_STD:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def compute_paa(series, w: int) -> np.ndarray:
    """Per-segment means of ``series`` over ``w`` equal-length segments."""
    x = np.asarray(series, dtype=np.float64)
    n = x.shape[-1]
    if w > n:
        raise ValueError(f"segment count {w} exceeds series length {n}")
    if n % w != 0:
        raise ValueError(f"series length {n} not divisible by segment count {w}")
    return x.reshape(*x.shape[:-1], w, n // w).mean(axis=-1)


def paa_to_sax(paa, breakpoints: Breakpoints) -> np.ndarray:
    """Map PAA coefficients to symbols; a coefficient equal to a breakpoint
    is assigned to the upper region."""
    coeffs = np.asarray(paa)
    return np.searchsorted(breakpoints.thresholds, coeffs, side="right").astype(np.uint8)


def _segment_gaps(node_isax: ISaxWord, values, breakpoints: Breakpoints):
    lo, hi = breakpoints.region(node_isax.prefixes, node_isax.lengths)
    v = np.asarray(values, dtype=np.float64)
    return np.maximum(np.maximum(lo - v, v - hi), 0.0)


def lower_bound_ed(node_isax: ISaxWord, query_paa, n: int, breakpoints: Breakpoints) -> float:
    """Mindist from a query PAA to the region of an iSAX word.

    Never exceeds ED(q, s) for any series s whose SAX word is covered by
    ``node_isax``; scaled by sqrt(n/w) so it compares against raw ED.
    """
    q = np.asarray(query_paa, dtype=np.float64)
    if q.shape[-1] != node_isax.w:
        raise ValueError("segment count mismatch between iSAX word and query PAA")
    gaps = _segment_gaps(node_isax, q, breakpoints)
    return math.sqrt(n / node_isax.w * float(np.sum(gaps * gaps)))


def query_envelope(query, window: int):
    """Running min/max envelope of a series under a Sakoe-Chiba band."""
    q = np.asarray(query, dtype=np.float64)
    if window < 0:
        raise ValueError("window must be non-negative")
    if window == 0:
        return q.copy(), q.copy()
    size = 2 * window + 1
    upper = maximum_filter1d(q, size=size, mode="nearest")
    lower = minimum_filter1d(q, size=size, mode="nearest")
    return lower, upper


def lower_bound_dtw(node_isax: ISaxWord, query, window: int, breakpoints: Breakpoints) -> float:
    """DTW mindist: PAA of the query envelope against the node's regions."""
    q = np.asarray(query, dtype=np.float64)
    n = q.shape[-1]
    if window >= n:
        raise ValueError("window must be smaller than the series length")
    lo_env, up_env = query_envelope(q, window)
    w = node_isax.w
    paa_lo = compute_paa(lo_env, w)
    paa_up = compute_paa(up_env, w)
    lo, hi = breakpoints.region(node_isax.prefixes, node_isax.lengths)
    gaps = np.maximum(np.maximum(lo - paa_up, paa_lo - hi), 0.0)
    return math.sqrt(n / w * float(np.sum(gaps * gaps)))


@njit(cache=True)
def _dtw_band(a, b, r, cutoff_sq):  # pragma: no cover - compiled
    n = a.shape[0]
    width = 2 * r + 1
    inf = np.inf
    prev = np.full(width, inf)
    cur = np.full(width, inf)
    for i in range(n):
        j_lo = max(0, i - r)
        j_hi = min(n - 1, i + r)
        for k in range(width):
            cur[k] = inf
        for j in range(j_lo, j_hi + 1):
            k = j - i + r
            d = a[i] - b[j]
            cost = d * d
            if i == 0 and j == 0:
                cur[k] = cost
                continue
            best = inf
            if k > 0 and cur[k - 1] < best:       # (i, j-1)
                best = cur[k - 1]
            if i > 0 and k + 1 < width and prev[k + 1] < best:  # (i-1, j)
                best = prev[k + 1]
            if i > 0 and prev[k] < best:          # (i-1, j-1)
                best = prev[k]
            cur[k] = cost + best
        row_min = inf
        for j in range(j_lo, j_hi + 1):
            if cur[j - i + r] < row_min:
                row_min = cur[j - i + r]
        # every warping path crosses row i, so row_min already lower-bounds
        # the final cost; give up once it cannot beat the cutoff
        if row_min > cutoff_sq:
            return row_min
        prev, cur = cur, prev
    return prev[r]


def dtw_distance(a, b, window: int, cutoff: float = math.inf) -> float:
    """Sakoe-Chiba banded DTW with squared point cost and a final sqrt.

    ``window`` is the band radius in points; 0 pins the diagonal, which
    makes the result equal to the Euclidean distance.  When ``cutoff`` is
    given, the computation may stop early as soon as the distance provably
    exceeds it; the returned value is then some lower bound that is still
    strictly greater than ``cutoff``.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("series lengths differ")
    if math.isinf(cutoff):
        cutoff_sq = math.inf
    else:
        # inflate by a few ulps so exact ties at the cutoff never abandon
        cutoff_sq = cutoff * cutoff * (1.0 + 1e-12)
    return math.sqrt(float(_dtw_band(a, b, int(window), cutoff_sq)))


def lb_keogh(lower_env, upper_env, series_matrix) -> np.ndarray:
    """Pointwise envelope lower bound for DTW, vectorized over rows."""
    s = np.asarray(series_matrix, dtype=np.float64)
    gaps = np.maximum(np.maximum(lower_env - s, s - upper_env), 0.0)
    return np.sqrt(np.sum(gaps * gaps, axis=-1))


def series_envelopes(series_matrix, window: int):
    """Per-row sliding min/max envelopes (band radius ``window``)."""
    x = np.asarray(series_matrix)
    size = 2 * int(window) + 1
    return (minimum_filter1d(x, size, axis=-1, mode="nearest"),
            maximum_filter1d(x, size, axis=-1, mode="nearest"))


@njit(cache=True)
def _lb_cascade_sq(x, x_lo, x_up, q, q_lo, q_up):  # pragma: no cover
    m, n = x.shape
    out = np.empty(m)
    for i in range(m):
        fwd = 0.0
        rev = 0.0
        for j in range(n):
            v = x[i, j]
            if v < q_lo[j]:
                g = q_lo[j] - v
            elif v > q_up[j]:
                g = v - q_up[j]
            else:
                g = 0.0
            fwd += g * g
            u = q[j]
            if u < x_lo[i, j]:
                g = x_lo[i, j] - u
            elif u > x_up[i, j]:
                g = u - x_up[i, j]
            else:
                g = 0.0
            rev += g * g
        out[i] = max(fwd, rev)
    return out


def combined_dtw_bound(query, query_env, series_matrix, series_env) -> np.ndarray:
    """Tightest of the two one-sided envelope bounds, one fused pass.

    ``query_env`` comes from :func:`query_envelope`, ``series_env`` from
    :func:`series_envelopes`; both sides underestimate the banded DTW, so
    their maximum does too.
    """
    x = np.ascontiguousarray(series_matrix)
    q = np.ascontiguousarray(query, dtype=np.float64)
    # widen the query envelope by one ulp when narrowing its dtype so the
    # cast can never inflate a gap; the final deflation absorbs low-precision
    # rounding inside the accumulation
    q_lo = np.nextafter(query_env[0].astype(x.dtype), -np.inf)
    q_up = np.nextafter(query_env[1].astype(x.dtype), np.inf)
    x_lo = np.ascontiguousarray(series_env[0], dtype=x.dtype)
    x_up = np.ascontiguousarray(series_env[1], dtype=x.dtype)
    bound = np.sqrt(_lb_cascade_sq(x, np.ascontiguousarray(x_lo),
                                   np.ascontiguousarray(x_up), q,
                                   np.ascontiguousarray(q_lo),
                                   np.ascontiguousarray(q_up)))
    return bound * (1.0 - 1e-6)


def leaf_upper_bound(node_isax: ISaxWord, n: int, breakpoints: Breakpoints) -> float:
    """Worst-case ED between two series both covered by ``node_isax``.

    Returns ``inf`` when any segment region is unbounded (bit-length too
    small to pin both sides).
    """
    lo, hi = breakpoints.region(node_isax.prefixes, node_isax.lengths)
    widths = hi - lo
    if not np.all(np.isfinite(widths)):
        return math.inf
    return math.sqrt(n / node_isax.w * float(np.sum(widths * widths)))

"""Disk-backed adaptive multi-ary SAX tree for data-series kNN search."""

from .config import BuildConfig
from .index import (
    Index,
    IndexFormatError,
    RoutingError,
    build_index,
    index_stats,
    load_index,
)
from .query import KnnResult, approx_search, exact_search, extended_approx_search
from .summarization import (
    ISaxWord,
    compute_paa,
    dtw_distance,
    get_breakpoints,
    paa_to_sax,
    z_normalize,
)
from .updates import delete_series, insert_series, maybe_resplit

__version__ = "1.0.0"

__all__ = [
    "BuildConfig",
    "Index",
    "IndexFormatError",
    "RoutingError",
    "ISaxWord",
    "KnnResult",
    "approx_search",
    "build_index",
    "compute_paa",
    "delete_series",
    "dtw_distance",
    "exact_search",
    "extended_approx_search",
    "get_breakpoints",
    "index_stats",
    "insert_series",
    "load_index",
    "maybe_resplit",
    "paa_to_sax",
    "z_normalize",
    "__version__",
]

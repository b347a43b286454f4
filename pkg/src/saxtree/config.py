"""Build-time parameters shared across the index modules."""

from __future__ import annotations

from dataclasses import dataclass, asdict


@dataclass
class BuildConfig:
    """Tunable knobs for index construction.

    ``n`` is the series length, ``w`` the number of PAA segments and ``b``
    the bits per SAX symbol (cardinality 2^b).  ``fill_low``/``fill_high``
    bound the average fill factor of children when choosing a fanout,
    ``alpha`` weighs the compactness term of the split objective, ``rho``
    bounds pack demotion bits and ``small_node_ratio`` decides which leaves
    are small enough to pack.  ``fuzzy`` (when set) is the boundary
    fraction used for series duplication.
    """

    n: int
    w: int = 16
    b: int = 8
    th: int = 10000
    fill_low: float = 0.5
    fill_high: float = 3.0
    alpha: float = 0.2
    rho: float = 0.5
    small_node_ratio: float = 1.0
    fuzzy: float | None = None
    max_duplications: int = 3
    buffer_series: int = 100_000
    rng_seed: int = 0
    split_strategy: str = "adaptive"
    packing: bool = True

    def __post_init__(self):
        if self.n < 1 or self.w < 1:
            raise ValueError("series length and segment count must be positive")
        if self.n % self.w != 0:
            raise ValueError(
                f"series length {self.n} must be divisible by segment count {self.w}"
            )
        if not 1 <= self.b <= 8:
            raise ValueError(f"bits per symbol must be in [1, 8], got {self.b}")
        if self.th < 1:
            raise ValueError("leaf capacity must be at least 1")
        if not 0 < self.fill_low < self.fill_high:
            raise ValueError("fill-factor band requires 0 < fill_low < fill_high")
        if self.fuzzy is not None and not 0 < self.fuzzy < 1:
            raise ValueError("fuzzy boundary fraction must lie in (0, 1)")
        if self.max_duplications < 0:
            raise ValueError("max_duplications must be non-negative")
        if self.buffer_series < 1:
            raise ValueError("buffer capacity must be at least one series")
        if self.rho < 0:
            raise ValueError("demotion ratio must be non-negative")
        if self.small_node_ratio < 0:
            raise ValueError("small-node threshold multiplier must be non-negative")
        if self.split_strategy not in ("adaptive", "binary"):
            raise ValueError(f"unknown split strategy {self.split_strategy!r}")

    def to_dict(self) -> dict:
        return asdict(self)

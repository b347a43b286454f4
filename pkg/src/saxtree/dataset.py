"""Binary dataset file handling.

Datasets are headerless little-endian float32 files holding ``count``
series of length ``n``, series-major.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

__all__ = ["write_series", "count_series", "load_series", "iter_batches", "read_series"]


def write_series(path, data) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    arr.tofile(str(path))


def count_series(path, n: int) -> int:
    size = os.path.getsize(path)
    if size % (4 * n) != 0:
        raise ValueError(
            f"dataset {path} has {size} bytes, not a multiple of {4 * n} "
            f"(series length {n})"
        )
    return size // (4 * n)


def load_series(path, n: int) -> np.ndarray:
    count = count_series(path, n)
    data = np.fromfile(str(path), dtype="<f4").reshape(count, n)
    return data


def read_series(path, n: int, start: int, count: int) -> np.ndarray:
    with open(path, "rb") as fh:
        fh.seek(start * 4 * n)
        data = np.fromfile(fh, dtype="<f4", count=count * n)
    return data.reshape(-1, n)


def iter_batches(path, n: int, batch: int):
    """Yield (start_ordinal, float32 array) batches of at most ``batch`` series."""
    total = count_series(path, n)
    with open(str(path), "rb") as fh:
        start = 0
        while start < total:
            take = min(batch, total - start)
            data = np.fromfile(fh, dtype="<f4", count=take * n)
            if data.size != take * n:
                raise IOError(f"short read from dataset {path}")
            yield start, data.reshape(take, n)
            start += take

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np
from tqdm import tqdm

from spstgcn.errors import ConfigError

T = TypeVar("T")
R = TypeVar("R")

# Every binary block in caches and checkpoints is stored with this dtype.
LE_FLOAT64 = np.dtype("<f8")


def resolve_jobs(jobs: Optional[int]) -> int:
    """Turn a `--jobs` value into a worker count, `None` or `0` meaning all cores."""
    if jobs is None or jobs == 0:
        return os.cpu_count() or 1
    if jobs < 0:
        raise ConfigError(f"jobs must be non-negative, got {jobs}.")
    return jobs


def parallel_map(
    func: Callable[[T], R],
    items: Iterable[T],
    jobs: Optional[int] = 1,
    desc: str = "",
    progress: bool = False,
) -> List[R]:
    """Apply `func` to every item, returning results in input order regardless of `jobs`.

    `func` must be picklable (a module-level function or a `functools.partial` of one)
    when more than one worker is used.
    """
    items = list(items)
    workers = min(resolve_jobs(jobs), max(len(items), 1))
    if workers == 1:
        return [func(item) for item in tqdm(items, desc = desc, disable = not progress)]
    with ProcessPoolExecutor(max_workers = workers) as pool:
        chunksize = max(1, len(items) // (workers * 4))
        return list(
            tqdm(
                pool.map(func, items, chunksize = chunksize),
                total = len(items),
                desc = desc,
                disable = not progress,
            )
        )


def to_le_bytes(array: np.ndarray) -> bytes:
    """Encode an array as little-endian 64-bit floats in C order."""
    return np.ascontiguousarray(array, dtype = LE_FLOAT64).tobytes()


def from_le_bytes(data: bytes, shape) -> np.ndarray:
    """Decode little-endian 64-bit floats into a native float64 array of `shape`."""
    return np.frombuffer(data, dtype = LE_FLOAT64).astype(np.float64).reshape(shape)


def parse_bool(text: str) -> bool:
    """Parse the boolean spellings accepted in config files."""
    lowered = text.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {text!r}")

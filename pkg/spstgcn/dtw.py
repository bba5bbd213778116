"""Exact dynamic time warping and the FastDTW multilevel approximation."""

from typing import Callable, Dict, List, Optional, Set, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist

from spstgcn.dataclasses import WarpPath
from spstgcn.errors import DimensionMismatch, NonFiniteCoordinate, ShapeMismatch

Cost = Union[str, Callable[[np.ndarray, np.ndarray], float]]


def as_series(points) -> np.ndarray:
    """Return `points` as a `(T, C)` float64 array; 1-D input is one channel."""
    series = np.asarray(points, dtype = np.float64)
    if series.ndim == 1:
        series = series[:, None]
    if series.ndim != 2 or series.shape[0] < 1:
        raise ShapeMismatch(f"A series is a non-empty (T, C) array, got shape {series.shape}.")
    if not np.all(np.isfinite(series)):
        raise NonFiniteCoordinate("Series contains NaN or infinite points.")
    return series


def _check_pair(a, b) -> Tuple[np.ndarray, np.ndarray]:
    a, b = as_series(a), as_series(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"Series have {a.shape[1]} and {b.shape[1]} channels.")
    return a, b


# Inclusive `(first, last)` column range per row; `first > last` marks an empty row.
Spans = List[Tuple[int, int]]


def _accumulate(a: np.ndarray, b: np.ndarray, cost: Cost, spans: Optional[Spans] = None) -> np.ndarray:
    """Fill the cumulative-cost table, evaluating point costs only inside `spans` when given."""
    rows, cols = a.shape[0], b.shape[0]
    if spans is None:
        spans = [(0, cols - 1)] * rows
    acc = np.full((rows + 1, cols + 1), np.inf)
    acc[0, 0] = 0.0
    for i, (first, last) in enumerate(spans):
        if first > last:
            continue
        row = cdist(a[i:i + 1], b[first:last + 1], cost)[0]
        for j, point in zip(range(first, last + 1), row):
            acc[i + 1, j + 1] = point + min(acc[i, j], acc[i, j + 1], acc[i + 1, j])
    return acc[1:, 1:]


def _backtrack(acc: np.ndarray) -> List[Tuple[int, int]]:
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            # ties prefer the diagonal step
            step = int(np.argmin((acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])))
            if step == 0:
                i, j = i - 1, j - 1
            elif step == 1:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    return path


def _solve(a: np.ndarray, b: np.ndarray, cost: Cost, spans: Optional[Spans] = None) -> WarpPath:
    acc = _accumulate(a, b, cost, spans)
    return WarpPath(path = _backtrack(acc), total_cost = float(acc[-1, -1]))


def dtw_exact(a, b, cost: Cost = "euclidean") -> WarpPath:
    """Compute the globally optimal warping path between two series.

    ### Args:
    - `a`, `b`: `(T, C)` arrays, or 1-D arrays for single-channel series.
    - `cost`: A `scipy.spatial.distance.cdist` metric name or a `(u, v) -> float` callable.
        Defaults to the Euclidean distance between points.

    ### Returns:
    - `WarpPath` from `(0, 0)` to `(T_a - 1, T_b - 1)` whose cost is minimal.

    ### Raises:
    - `DimensionMismatch`: The series have a different number of channels.
    """
    a, b = _check_pair(a, b)
    return _solve(a, b, cost)


def _coarsen(series: np.ndarray) -> np.ndarray:
    """Halve the time resolution by averaging consecutive pairs; an odd last point is dropped."""
    even = series.shape[0] - series.shape[0] % 2
    return (series[0:even:2] + series[1:even:2]) / 2.0


def _pyramid(series: np.ndarray) -> List[np.ndarray]:
    """The series followed by its successive halvings, down to a single point."""
    levels = [series]
    while levels[-1].shape[0] >= 2:
        levels.append(_coarsen(levels[-1]))
    return levels


def _expand_window(path: List[Tuple[int, int]], rows: int, cols: int, radius: int) -> Spans:
    """Project a coarse path onto the finer grid and widen it by `radius` cells."""
    widened = set()
    for i, j in path:
        for di in range(-radius, radius + 1):
            for dj in range(-radius, radius + 1):
                widened.add((i + di, j + dj))

    def fine(index: int, coarse_len: int, fine_len: int) -> List[int]:
        # The last coarse point also owns the fine point dropped by an odd length.
        cells = [2 * index, 2 * index + 1]
        if index == coarse_len - 1:
            cells.append(fine_len - 1)
        return cells

    by_row: Dict[int, Set[int]] = {}
    for i, j in widened:
        for fi in fine(i, rows // 2, rows):
            columns = by_row.setdefault(fi, set())
            columns.update(fine(j, cols // 2, cols))

    # Keep one contiguous run of columns per row so the window stays connected.
    spans = []
    start = 0
    for i in range(rows):
        run: List[int] = []
        for j in sorted(c for c in by_row.get(i, ()) if start <= c < cols):
            if run and j != run[-1] + 1:
                break
            run.append(j)
        if run:
            spans.append((run[0], run[-1]))
            start = run[0]
        else:
            spans.append((0, -1))
    return spans


def _fastdtw(
    levels_a: List[np.ndarray], levels_b: List[np.ndarray], level: int, radius: int, cost: Cost
) -> WarpPath:
    a, b = levels_a[level], levels_b[level]
    min_size = radius + 2
    if a.shape[0] < min_size or b.shape[0] < min_size:
        return _solve(a, b, cost)
    coarse = _fastdtw(levels_a, levels_b, level + 1, radius, cost)
    return _solve(a, b, cost, _expand_window(coarse.path, a.shape[0], b.shape[0], radius))


def fastdtw(a, b, radius: int = 1, cost: Cost = "euclidean", monotone: bool = True) -> WarpPath:
    """Approximate DTW by coarsening, solving recursively and refining within `radius`.

    Series shorter than `radius + 2` are solved exactly. Point costs are only evaluated inside
    the refinement window, so every level costs `O(T * radius)`. The returned path is always a
    valid warping path, so its cost is never below `dtw_exact`.

    ### Args:
    - `radius` (`int`): Cells kept around the projected coarse path at every level.
    - `cost`: As for `dtw_exact`.
    - `monotone` (`bool`): Keep the cheapest path over every radius up to `radius`, so the cost
        never increases when the radius grows. Defaults to `True`.

    ### Raises:
    - `DimensionMismatch`: The series have a different number of channels.
    """
    if radius < 0:
        raise ValueError(f"radius must be non-negative, got {radius}.")
    a, b = _check_pair(a, b)
    if min(a.shape[0], b.shape[0]) < radius + 2:
        return _solve(a, b, cost)
    levels_a, levels_b = _pyramid(a), _pyramid(b)
    best = _fastdtw(levels_a, levels_b, 0, radius, cost)
    if monotone:
        for smaller in range(radius - 1, -1, -1):
            candidate = _fastdtw(levels_a, levels_b, 0, smaller, cost)
            if candidate.total_cost < best.total_cost:
                best = candidate
    return best

"""Per-sample structural adjacency built from edge-node trajectory distances."""

import logging
import struct
from functools import partial
from typing import Dict, List, Optional, Sequence

import numpy as np

from spstgcn.dataclasses import (
    DtwConfig,
    EdgeDistanceMatrix,
    FeatureTensor,
    GraphSpec,
    StructuralAdjacency,
)
from spstgcn.dtw import dtw_exact, fastdtw
from spstgcn.enums import AdjacencySign, DistanceMeasure
from spstgcn.errors import CacheError, ShapeMismatch
from spstgcn.utils import from_le_bytes, parallel_map, to_le_bytes

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"SPSTADJ\x00"
CACHE_VERSION = 1


def trajectory(x: np.ndarray, joint: int, body: int = 0) -> np.ndarray:
    """Return the `(T, C)` series of one joint of one body."""
    return x[:, :, joint, body].T


def _lockstep(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(a - b, axis = 1)))


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        return 0.0
    if na == 0.0 or nb == 0.0:
        return 1.0
    return float(1.0 - np.dot(a.ravel(), b.ravel()) / (na * nb))


def pair_distance(a: np.ndarray, b: np.ndarray, cfg: DtwConfig) -> float:
    """Distance between two edge-node series under `cfg.measure`."""
    if cfg.measure is DistanceMeasure.EUCLIDEAN:
        return _lockstep(a, b)
    if cfg.measure is DistanceMeasure.COSINE:
        return _cosine(a, b)
    if cfg.measure is DistanceMeasure.DTW:
        warp = dtw_exact(a, b)
    else:
        warp = fastdtw(a, b, radius = cfg.radius)
    return warp.total_cost / len(warp) if cfg.normalize else warp.total_cost


def edge_distance_matrix(x, g: GraphSpec, cfg: Optional[DtwConfig] = None) -> EdgeDistanceMatrix:
    """Compute the distance between every pair of edge nodes of the primary body.

    Each unordered pair is evaluated once and mirrored, so `k` edge nodes cost
    `k * (k - 1) / 2` evaluations.

    ### Args:
    - `x` (`FeatureTensor` or `np.ndarray`): A `(C, T, V, M)` tensor.
    - `g` (`GraphSpec`): Supplies the edge nodes.
    - `cfg` (`DtwConfig`): Distance measure, FastDTW radius and normalization.
    """
    cfg = cfg or DtwConfig()
    data = x.data if isinstance(x, FeatureTensor) else np.asarray(x, dtype = np.float64)
    if data.ndim != 4 or data.shape[2] != g.joint_count:
        raise ShapeMismatch(f"Expected (C, T, {g.joint_count}, M), got {data.shape}.")

    V = g.joint_count
    D = np.zeros((V, V))
    done = np.zeros((V, V), dtype = bool)
    evaluations = 0
    for a in g.edge_nodes:
        for b in g.edge_nodes:
            if a != b and not done[a, b]:
                D[a, b] = D[b, a] = pair_distance(trajectory(data, a), trajectory(data, b), cfg)
                done[a, b] = done[b, a] = True
                evaluations += 1
    return EdgeDistanceMatrix(D = D, edge_nodes = tuple(g.edge_nodes), evaluations = evaluations)


def structural_adjacency(
    D: EdgeDistanceMatrix,
    epsilon: float = 1e-6,
    sign: AdjacencySign = AdjacencySign.DIFFERENTIATE,
) -> StructuralAdjacency:
    """Return `As = I - D^-1` with the reciprocal taken entry-wise over distinct edge nodes.

    Distances below `epsilon` are clamped to it, so identical trajectories give `-1 / epsilon`.
    With `AdjacencySign.AGGREGATE` the reciprocals are added instead.
    """
    V = D.D.shape[0]
    As = np.eye(V)
    factor = -1.0 if sign is AdjacencySign.DIFFERENTIATE else 1.0
    for a in D.edge_nodes:
        for b in D.edge_nodes:
            if a != b:
                As[a, b] = factor / max(D.D[a, b], epsilon)
    return StructuralAdjacency(As = As)


def adjacency_for(x: np.ndarray, g: GraphSpec, cfg: DtwConfig) -> np.ndarray:
    """Distances then structural matrix for one raw `(C, T, V, M)` array."""
    return structural_adjacency(edge_distance_matrix(x, g, cfg), cfg.epsilon, cfg.sign).As


def precompute_adjacency(
    tensors: Sequence,
    g: GraphSpec,
    cfg: Optional[DtwConfig] = None,
    jobs: Optional[int] = 1,
    progress: bool = False,
) -> np.ndarray:
    """Compute `As` for every sample, returning an `(N, V, V)` array in input order."""
    cfg = cfg or DtwConfig()
    arrays = [t.data if isinstance(t, FeatureTensor) else np.asarray(t, dtype = np.float64) for t in tensors]
    logger.info("Computing structural adjacency for %d samples (%s).", len(arrays), cfg.measure.value)
    matrices = parallel_map(
        partial(adjacency_for, g = g, cfg = cfg),
        arrays,
        jobs = jobs,
        desc = "adjacency",
        progress = progress,
    )
    V = g.joint_count
    return np.stack(matrices) if matrices else np.zeros((0, V, V))


def off_diagonal_summary(matrices: np.ndarray, edge_nodes: Sequence[int]) -> Dict[str, float]:
    """Minimum and median of the edge-node off-diagonal entries over a stack of matrices."""
    nodes = list(edge_nodes)
    values = [
        m[a, b] for m in matrices for a in nodes for b in nodes if a != b
    ]
    if not values:
        return {"min": 0.0, "median": 0.0}
    return {"min": float(np.min(values)), "median": float(np.median(values))}


def write_adjacency_cache(path: str, ids: Sequence[str], matrices: np.ndarray) -> None:
    """Write `(id, V x V)` blocks of little-endian float64 behind a small header."""
    matrices = np.asarray(matrices, dtype = np.float64)
    if len(ids) != len(matrices):
        raise ShapeMismatch(f"{len(ids)} ids for {len(matrices)} matrices.")
    V = matrices.shape[-1] if len(matrices) else 0
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<III", CACHE_VERSION, len(ids), V))
        for sample_id, matrix in zip(ids, matrices):
            encoded = sample_id.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(to_le_bytes(matrix))


def read_adjacency_cache(path: str) -> Dict[str, np.ndarray]:
    """Read a cache written by `write_adjacency_cache`, keeping file order."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != CACHE_MAGIC:
        raise CacheError(f"{path} is not an adjacency cache.")
    try:
        version, count, V = struct.unpack_from("<III", blob, 8)
        if version != CACHE_VERSION:
            raise CacheError(f"{path} has cache version {version}, expected {CACHE_VERSION}.")
        offset = 20
        result = {}
        for _ in range(count):
            (length,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            sample_id = blob[offset:offset + length].decode("utf-8")
            offset += length
            size = V * V * 8
            if offset + size > len(blob):
                raise CacheError(f"{path} is truncated at sample {sample_id!r}.")
            result[sample_id] = from_le_bytes(blob[offset:offset + size], (V, V))
            offset += size
    except struct.error:
        raise CacheError(f"{path} is truncated.") from None
    return result

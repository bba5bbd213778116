"""Skeleton topology and the hop-partitioned spatial adjacency."""

import logging
from collections import deque
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from spstgcn.dataclasses import GraphSpec, SpatialAdjacency
from spstgcn.errors import GraphError

logger = logging.getLogger(__name__)

# 0-based; NTU documentation numbers these 1..25.
NTU_JOINT_NAMES = (
    "base_of_spine",
    "middle_of_spine",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "left_hand",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "right_hand",
    "left_hip",
    "left_knee",
    "left_ankle",
    "left_foot",
    "right_hip",
    "right_knee",
    "right_ankle",
    "right_foot",
    "spine",
    "tip_of_left_hand",
    "left_thumb",
    "tip_of_right_hand",
    "right_thumb",
)

NTU_EDGES_1BASED = (
    (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7),
    (9, 21), (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14), (16, 15),
    (17, 1), (18, 17), (19, 18), (20, 19), (22, 8), (23, 8), (24, 12), (25, 12),
)

NTU_CENTER = 1
# head, left hand tip, right hand tip, left foot, right foot
NTU_EDGE_NODES = (3, 21, 23, 15, 19)


def _adjacency_lists(joint_count: int, edges: Iterable[Tuple[int, int]]) -> List[List[int]]:
    neighbours = [[] for _ in range(joint_count)]
    for u, v in edges:
        neighbours[u].append(v)
        neighbours[v].append(u)
    return neighbours


def _parents(joint_count: int, edges: Sequence[Tuple[int, int]], root: int) -> Tuple[int, ...]:
    neighbours = _adjacency_lists(joint_count, edges)
    parents = [-1] * joint_count
    parents[root] = root
    queue = deque([root])
    while queue:
        joint = queue.popleft()
        for other in neighbours[joint]:
            if parents[other] == -1:
                parents[other] = joint
                queue.append(other)
    return tuple(parents)


def make_graph(
    joint_count: int,
    edges: Sequence[Tuple[int, int]],
    center_joint: int,
    edge_nodes: Sequence[int],
    joint_names: Sequence[str] = (),
) -> GraphSpec:
    """Validate a topology and return it as a `GraphSpec` with its parent map filled in.

    ### Raises:
    - `GraphError`: The edges are not a connected tree over `joint_count` joints, the center is
        out of range, or an edge node is not a degree-1 joint.
    """
    edges = [(int(u), int(v)) for u, v in edges]
    if joint_count < 1:
        raise GraphError(f"A graph needs at least one joint, got {joint_count}.")
    if not 0 <= center_joint < joint_count:
        raise GraphError(f"Center joint {center_joint} is outside [0, {joint_count}).")
    for u, v in edges:
        if not (0 <= u < joint_count and 0 <= v < joint_count) or u == v:
            raise GraphError(f"Edge ({u}, {v}) is not a pair of distinct joints in [0, {joint_count}).")
    if len(edges) != joint_count - 1 or len({frozenset(e) for e in edges}) != len(edges):
        raise GraphError(f"A tree over {joint_count} joints has {joint_count - 1} distinct edges, got {len(edges)}.")

    parents = _parents(joint_count, edges, center_joint)
    if -1 in parents:
        raise GraphError(f"Joint {parents.index(-1)} is not connected to the center joint.")

    neighbours = _adjacency_lists(joint_count, edges)
    edge_nodes = tuple(int(node) for node in edge_nodes)
    if len(set(edge_nodes)) != len(edge_nodes):
        raise GraphError(f"Edge nodes repeat: {edge_nodes}.")
    for node in edge_nodes:
        if not 0 <= node < joint_count:
            raise GraphError(f"Edge node {node} is outside [0, {joint_count}).")
        if len(neighbours[node]) != 1:
            raise GraphError(f"Edge node {node} has degree {len(neighbours[node])}, expected 1.")

    return GraphSpec(
        joint_count = joint_count,
        edges = edges,
        center_joint = center_joint,
        edge_nodes = edge_nodes,
        parent_map = parents,
        joint_names = tuple(joint_names),
    )


def ntu_graph(edge_nodes: Optional[Sequence[int]] = None) -> GraphSpec:
    """Return the 25-joint NTU RGB+D tree centered on the middle of the spine.

    The default edge nodes are the head, both hand tips and both feet. The thumbs are
    degree-1 as well and may be passed explicitly.
    """
    return make_graph(
        joint_count = len(NTU_JOINT_NAMES),
        edges = [(u - 1, v - 1) for u, v in NTU_EDGES_1BASED],
        center_joint = NTU_CENTER,
        edge_nodes = NTU_EDGE_NODES if edge_nodes is None else edge_nodes,
        joint_names = NTU_JOINT_NAMES,
    )


def hop_distances(g: GraphSpec) -> np.ndarray:
    """Return the `(V, V)` matrix of shortest-path hop counts."""
    adjacency = np.zeros((g.joint_count, g.joint_count))
    for u, v in g.edges:
        adjacency[u, v] = adjacency[v, u] = 1.0
    return shortest_path(csr_matrix(adjacency), directed = False, unweighted = True)


def hop_partition(g: GraphSpec, max_hop: int) -> np.ndarray:
    """Return `(max_hop + 1, V, V)` 0/1 matrices, matrix `j` marking joint pairs exactly `j` hops apart."""
    if max_hop < 0:
        raise GraphError(f"max_hop must be non-negative, got {max_hop}.")
    distances = hop_distances(g)
    return np.stack([(distances == hop).astype(np.float64) for hop in range(max_hop + 1)])


def normalize(A: np.ndarray, alpha: float = 1e-3) -> np.ndarray:
    """Return `L^-1/2 A L^-1/2` where `L` is diagonal with the row sums of `A` plus `alpha`."""
    A = np.asarray(A, dtype = np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise GraphError(f"Adjacency must be square, got shape {A.shape}.")
    degree = A.sum(axis = 1) + alpha
    inv_sqrt = np.zeros_like(degree)
    np.power(degree, -0.5, out = inv_sqrt, where = degree > 0)
    return inv_sqrt[:, None] * A * inv_sqrt[None, :]


def spatial_adjacency(g: GraphSpec, max_hop: int = 2, alpha: float = 1e-3) -> SpatialAdjacency:
    """Build the normalized hop-partitioned stack used by the spatial branch."""
    raw = hop_partition(g, max_hop)
    partitions = np.stack([normalize(A, alpha) for A in raw])
    logger.debug("Built %d spatial partitions over %d joints.", len(raw), g.joint_count)
    return SpatialAdjacency(
        partitions = partitions,
        raw = raw,
        degrees = raw.sum(axis = 2) + alpha,
        max_hop = max_hop,
        alpha = alpha,
    )


def graph_to_text(g: GraphSpec) -> str:
    """Serialize a graph as a `key = value` header followed by one edge per line."""
    lines = [
        f"joint_count = {g.joint_count}",
        f"center = {g.center_joint}",
        f"edge_nodes = {','.join(str(node) for node in g.edge_nodes)}",
        "",
    ]
    lines.extend(f"{u} {v}" for u, v in g.edges)
    return "\n".join(lines) + "\n"


def graph_from_text(text: str) -> GraphSpec:
    """Parse the output of `graph_to_text`."""
    header = {}
    edges = []
    for number, line in enumerate(text.splitlines(), start = 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line:
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"Line {number} is neither a header nor an edge: {line!r}.")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise GraphError(f"Line {number} has a non-integer joint: {line!r}.") from None
    try:
        joint_count = int(header["joint_count"])
        center = int(header["center"])
        edge_nodes = [int(node) for node in header["edge_nodes"].split(",") if node.strip()]
    except (KeyError, ValueError) as e:
        raise GraphError(f"Graph header is malformed: {e}.") from None
    names = NTU_JOINT_NAMES if joint_count == len(NTU_JOINT_NAMES) else ()
    return make_graph(joint_count, edges, center, edge_nodes, names)

"""Joint, velocity and bone input branches computed from raw coordinates."""

import struct
from typing import Tuple

import numpy as np

from spstgcn.dataclasses import BranchSet, FeatureTensor, GraphSpec
from spstgcn.enums import ChannelSemantics
from spstgcn.errors import CacheError, SequenceTooShort, ShapeMismatch
from spstgcn.utils import from_le_bytes, to_le_bytes

BONE_EPSILON = 1e-8
CACHE_MAGIC = b"SPSTBR\x00\x00"


def _raw(x: FeatureTensor) -> np.ndarray:
    if x.channel_semantics is not ChannelSemantics.RAW3D:
        raise ShapeMismatch(f"Expected raw3d input, got {x.channel_semantics.value}.")
    return x.data


def joint_branch(x: FeatureTensor, center_joint: int) -> FeatureTensor:
    """Concatenate coordinates with positions relative to `center_joint`."""
    data = _raw(x)
    if not 0 <= center_joint < data.shape[2]:
        raise ShapeMismatch(f"Center joint {center_joint} is outside [0, {data.shape[2]}).")
    relative = data - data[:, :, center_joint:center_joint + 1, :]
    return FeatureTensor(np.concatenate([data, relative]), ChannelSemantics.JOINT6)


def velocity_branch(x: FeatureTensor) -> FeatureTensor:
    """Concatenate one-frame and two-frame displacements, zero-padded at the tail.

    ### Raises:
    - `SequenceTooShort`: Fewer than 3 frames.
    """
    data = _raw(x)
    T = data.shape[1]
    if T < 3:
        raise SequenceTooShort(f"Velocity features need at least 3 frames, got {T}.")
    slow = np.zeros_like(data)
    fast = np.zeros_like(data)
    slow[:, :-1] = data[:, 1:] - data[:, :-1]
    fast[:, :-2] = data[:, 2:] - data[:, :-2]
    return FeatureTensor(np.concatenate([slow, fast]), ChannelSemantics.VELOCITY6)


def bone_branch(x: FeatureTensor, graph: GraphSpec) -> FeatureTensor:
    """Concatenate bone vectors with their three direction-cosine angles.

    Each joint's bone points from its parent in `graph.parent_map`; the center joint is its own
    parent, so its bone is zero. Zero bones get angles of pi/2.
    """
    data = _raw(x)
    if data.shape[2] != graph.joint_count:
        raise ShapeMismatch(f"Tensor has {data.shape[2]} joints, graph has {graph.joint_count}.")
    parents = np.asarray(graph.parent_map)
    bones = data - data[:, :, parents, :]
    length = np.maximum(np.sqrt(np.sum(bones ** 2, axis = 0, keepdims = True)), BONE_EPSILON)
    angles = np.arccos(np.clip(bones / length, -1.0, 1.0))
    return FeatureTensor(np.concatenate([bones, angles]), ChannelSemantics.BONE6)


def preprocess_all(x: FeatureTensor, graph: GraphSpec) -> BranchSet:
    """Compute all three branches of one raw tensor."""
    return BranchSet(
        joint = joint_branch(x, graph.center_joint),
        velocity = velocity_branch(x),
        bone = bone_branch(x, graph),
    )


def _header(tensor: FeatureTensor) -> bytes:
    return CACHE_MAGIC + struct.pack("<IIII", *tensor.shape)


def write_branch_cache(path: str, branches: BranchSet) -> None:
    """Write the joint, velocity and bone tensors as three `(magic, C, T, V, M)` + float64 blocks."""
    with open(path, "wb") as f:
        for tensor in (branches.joint, branches.velocity, branches.bone):
            f.write(_header(tensor))
            f.write(to_le_bytes(tensor.data))


def read_branch_cache(path: str) -> BranchSet:
    """Read a file written by `write_branch_cache`."""
    with open(path, "rb") as f:
        blob = f.read()
    tensors = []
    offset = 0
    semantics = (ChannelSemantics.JOINT6, ChannelSemantics.VELOCITY6, ChannelSemantics.BONE6)
    for kind in semantics:
        if blob[offset:offset + 8] != CACHE_MAGIC:
            raise CacheError(f"{path} has no {kind.value} block at byte {offset}.")
        try:
            shape: Tuple[int, ...] = struct.unpack_from("<IIII", blob, offset + 8)
        except struct.error:
            raise CacheError(f"{path} is truncated.") from None
        offset += 24
        size = int(np.prod(shape)) * 8
        if offset + size > len(blob):
            raise CacheError(f"{path} is truncated in the {kind.value} block.")
        tensors.append(FeatureTensor(from_le_bytes(blob[offset:offset + size], shape), kind))
        offset += size
    return BranchSet(*tensors)

"""NTU skeleton ingestion, manifests and deterministic synthetic datasets."""

import io
import logging
import math
import os
import re
from functools import partial
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from spstgcn.dataclasses import (
    DatasetManifest,
    FeatureTensor,
    FrameRecord,
    ManifestEntry,
    SkeletonSequence,
    SyntheticSpec,
)
from spstgcn.enums import ChannelSemantics, SplitRule
from spstgcn.errors import (
    EmptySequence,
    InvalidSpec,
    MalformedFile,
    ManifestError,
    NonFiniteCoordinate,
)
from spstgcn.utils import parallel_map

logger = logging.getLogger(__name__)

DEFAULT_TARGET_FRAMES = 64
DEFAULT_BODY_CAPACITY = 2

# Cross-subject training performers of the NTU RGB+D protocol.
NTU_XSUB_TRAIN_SUBJECTS = (1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38)
NTU_XVIEW_TRAIN_CAMERAS = (2, 3)
NTU_NAME = re.compile(r"S(\d{3})C(\d{3})P(\d{3})R(\d{3})A(\d{3})\.skeleton$")


class _Lines:
    """Cursor over the non-empty lines of a skeleton file."""

    def __init__(self, text: str, source: str):
        self.lines = [line.split() for line in text.splitlines() if line.strip()]
        self.index = 0
        self.source = source

    def next(self, what: str) -> List[str]:
        if self.index >= len(self.lines):
            raise MalformedFile(f"{self.source}: file ended while reading {what}.")
        tokens = self.lines[self.index]
        self.index += 1
        return tokens

    def next_int(self, what: str) -> int:
        tokens = self.next(what)
        try:
            return int(tokens[0])
        except ValueError:
            raise MalformedFile(f"{self.source}: line {self.index} has {tokens[0]!r} where {what} was expected.") from None

    @property
    def remaining(self) -> int:
        return len(self.lines) - self.index


def _read_text(source: Union[bytes, str, io.IOBase]) -> str:
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        try:
            return source.decode("ascii")
        except UnicodeDecodeError:
            raise MalformedFile("Skeleton files are ASCII text.") from None
    return source


def parse_ntu_skeleton_file(
    text: Union[bytes, str, io.IOBase],
    source_id: str = "",
    label: Optional[int] = None,
) -> SkeletonSequence:
    """Parse the NTU `.skeleton` text layout, keeping only body ids and 3D joint coordinates.

    ### Args:
    - `text`: File content as bytes, text, or a readable stream.
    - `source_id` (`str`): Identifier stored on the sequence and used in error messages.
    - `label` (`int`): Optional class index stored on the sequence.

    ### Raises:
    - `MalformedFile`: A declared frame, body or joint count disagrees with the content.
    - `NonFiniteCoordinate`: A coordinate is NaN or infinite.
    """
    cursor = _Lines(_read_text(text), source_id or "<skeleton>")
    frame_count = cursor.next_int("the frame count")
    if frame_count < 0:
        raise MalformedFile(f"{cursor.source}: negative frame count {frame_count}.")

    joint_count = None
    frames = []
    for frame_index in range(frame_count):
        body_count = cursor.next_int(f"the body count of frame {frame_index}")
        bodies = []
        for _ in range(body_count):
            header = cursor.next(f"a body header in frame {frame_index}")
            try:
                body_id = int(header[0])
            except ValueError:
                raise MalformedFile(f"{cursor.source}: body id {header[0]!r} is not an integer.") from None
            joints_declared = cursor.next_int(f"the joint count of body {body_id}")
            if joint_count is None:
                joint_count = joints_declared
            elif joints_declared != joint_count:
                raise MalformedFile(
                    f"{cursor.source}: body {body_id} in frame {frame_index} declares {joints_declared} joints, "
                    f"earlier bodies declared {joint_count}."
                )
            joints = np.empty((joints_declared, 3))
            for joint in range(joints_declared):
                fields = cursor.next(f"joint {joint} of body {body_id}")
                if len(fields) < 11:
                    raise MalformedFile(
                        f"{cursor.source}: joint line {cursor.index} has {len(fields)} fields, expected at least 11."
                    )
                try:
                    joints[joint] = [float(value) for value in fields[:3]]
                except ValueError:
                    raise MalformedFile(f"{cursor.source}: joint line {cursor.index} has a non-numeric coordinate.") from None
            if not np.all(np.isfinite(joints)):
                raise NonFiniteCoordinate(f"{cursor.source}: body {body_id} in frame {frame_index} has a non-finite coordinate.")
            bodies.append((body_id, joints))
        frames.append(FrameRecord(bodies = bodies))

    if cursor.remaining:
        raise MalformedFile(
            f"{cursor.source}: {cursor.remaining} lines remain after the {frame_count} declared frames."
        )
    capacity = max([DEFAULT_BODY_CAPACITY] + [len(frame.bodies) for frame in frames])
    return SkeletonSequence(
        frames = frames,
        joint_count = joint_count or 25,
        body_capacity = capacity,
        label = label,
        source_id = source_id,
    )


def read_ntu_skeleton(path: str, label: Optional[int] = None) -> SkeletonSequence:
    """Parse a `.skeleton` file from disk."""
    with open(path, "rb") as f:
        return parse_ntu_skeleton_file(f, source_id = os.path.splitext(os.path.basename(path))[0], label = label)


def write_ntu_skeleton_file(seq: SkeletonSequence) -> str:
    """Emit a sequence in the NTU `.skeleton` layout with non-3D fields zeroed."""
    lines = [str(len(seq.frames))]
    for frame in seq.frames:
        lines.append(str(len(frame.bodies)))
        for body_id, joints in frame.bodies:
            lines.append(f"{body_id} 0 0 0 0 0 0 0 0 2")
            lines.append(str(len(joints)))
            for x, y, z in joints:
                lines.append(f"{float(x)!r} {float(y)!r} {float(z)!r} 0 0 0 0 0 0 0 0 2")
    return "\n".join(lines) + "\n"


def _body_tracks(seq: SkeletonSequence) -> Tuple[List[int], Dict[int, np.ndarray], Dict[int, np.ndarray]]:
    order: List[int] = []
    tracks: Dict[int, np.ndarray] = {}
    present: Dict[int, np.ndarray] = {}
    for t, frame in enumerate(seq.frames):
        for body_id, joints in frame.bodies:
            if body_id not in tracks:
                order.append(body_id)
                tracks[body_id] = np.zeros((len(seq.frames), seq.joint_count, 3))
                present[body_id] = np.zeros(len(seq.frames), dtype = bool)
            tracks[body_id][t] = joints
            present[body_id][t] = True
    return order, tracks, present


def motion_energy(track: np.ndarray, present: np.ndarray) -> float:
    """Sum of squared frame-to-frame displacement over frames where the body is seen twice in a row."""
    both = present[1:] & present[:-1]
    steps = track[1:][both] - track[:-1][both]
    return float(np.sum(steps ** 2))


def resample_indices(frame_count: int, target_frames: int) -> np.ndarray:
    """Uniformly spaced frame indices, always starting at frame 0."""
    return (np.arange(target_frames) * frame_count) // target_frames


def to_tensor(
    seq: SkeletonSequence,
    target_frames: int = DEFAULT_TARGET_FRAMES,
    max_bodies: int = DEFAULT_BODY_CAPACITY,
) -> FeatureTensor:
    """Convert a sequence to a `(3, target_frames, V, max_bodies)` tensor.

    Bodies are ranked by motion energy, highest first, and bodies beyond `max_bodies` are
    dropped. Longer sequences are uniformly subsampled; shorter ones are zero-padded at the tail.

    ### Raises:
    - `EmptySequence`: No frame contains a body.
    """
    if target_frames < 1:
        raise InvalidSpec(f"target_frames must be positive, got {target_frames}.")
    order, tracks, present = _body_tracks(seq)
    if not order:
        raise EmptySequence(f"{seq.source_id or 'Sequence'} has no frame with a body.")

    energies = {body_id: motion_energy(tracks[body_id], present[body_id]) for body_id in order}
    ranked = sorted(order, key = lambda body_id: -energies[body_id])
    if len(ranked) > max_bodies:
        logger.debug("%s: dropping %d low-energy bodies.", seq.source_id, len(ranked) - max_bodies)

    frame_count = len(seq.frames)
    full = np.zeros((3, frame_count, seq.joint_count, max_bodies))
    for slot, body_id in enumerate(ranked[:max_bodies]):
        full[:, :, :, slot] = tracks[body_id].transpose(2, 0, 1)

    if frame_count > target_frames:
        data = full[:, resample_indices(frame_count, target_frames)]
    else:
        data = np.zeros((3, target_frames, seq.joint_count, max_bodies))
        data[:, :frame_count] = full
    return FeatureTensor(data, ChannelSemantics.RAW3D)


def tensor_to_sequence(x: FeatureTensor, label: Optional[int] = None, source_id: str = "") -> SkeletonSequence:
    """Turn a raw tensor back into a sequence, one body per non-zero slot and frame."""
    data = x.data
    frames = []
    for t in range(data.shape[1]):
        bodies = [
            (slot + 1, data[:, t, :, slot].T.copy())
            for slot in range(data.shape[3])
            if np.any(data[:, t, :, slot])
        ]
        frames.append(FrameRecord(bodies = bodies))
    return SkeletonSequence(
        frames = frames,
        joint_count = data.shape[2],
        body_capacity = max(DEFAULT_BODY_CAPACITY, data.shape[3]),
        label = label,
        source_id = source_id,
    )


def load_manifest(
    path: str,
    num_classes: Optional[int] = None,
    split_rule: SplitRule = SplitRule.EXPLICIT,
) -> DatasetManifest:
    """Read a `path<TAB>label<TAB>subject_id<TAB>camera_id` manifest.

    Relative paths are resolved against the manifest's directory.

    ### Raises:
    - `ManifestError`: A record is malformed, a path repeats, or a label is outside `[0, num_classes)`.
    """
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    seen = set()
    with open(path, "r", encoding = "utf-8") as f:
        for number, line in enumerate(f, start = 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ManifestError(f"{path}:{number}: expected 4 TAB-separated fields, got {len(fields)}.")
            try:
                label, subject, camera = int(fields[1]), int(fields[2]), int(fields[3])
            except ValueError:
                raise ManifestError(f"{path}:{number}: label, subject_id and camera_id must be integers.") from None
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise ManifestError(f"{path}:{number}: label {label} is outside [0, {num_classes}).")
            resolved = os.path.normpath(os.path.join(base, fields[0]))
            if resolved in seen:
                raise ManifestError(f"{path}:{number}: duplicate path {fields[0]}.")
            seen.add(resolved)
            entries.append(ManifestEntry(resolved, label, subject, camera))
    return DatasetManifest(entries = entries, split_rule = split_rule)


def write_manifest(manifest: DatasetManifest, path: str) -> None:
    """Write a manifest in the format read by `load_manifest`."""
    with open(path, "w", encoding = "utf-8") as f:
        for entry in manifest.entries:
            f.write(f"{entry.path}\t{entry.label}\t{entry.subject_id}\t{entry.camera_id}\n")


def manifest_from_directory(directory: str) -> DatasetManifest:
    """Build a manifest from NTU file names `SsssCcccPpppRrrrAaaa.skeleton` (label = action - 1)."""
    entries = []
    for name in sorted(os.listdir(directory)):
        match = NTU_NAME.match(name)
        if match:
            _, camera, subject, _, action = (int(group) for group in match.groups())
            entries.append(ManifestEntry(os.path.join(directory, name), action - 1, subject, camera))
    logger.info("Found %d NTU skeleton files in %s.", len(entries), directory)
    return DatasetManifest(entries = entries)


def split_manifest(
    manifest: DatasetManifest,
    rule: Optional[SplitRule] = None,
    training_ids: Optional[Iterable] = None,
) -> Tuple[DatasetManifest, DatasetManifest]:
    """Split into training and evaluation manifests.

    ### Args:
    - `rule` (`SplitRule`): Defaults to the manifest's own rule.
    - `training_ids`: Subjects, cameras or paths assigned to training. Cross-subject and
        cross-view splits default to the NTU RGB+D protocol.
    """
    rule = rule or manifest.split_rule
    if rule is SplitRule.BY_SUBJECT:
        keep = set(training_ids or NTU_XSUB_TRAIN_SUBJECTS)
        keys = [e.subject_id for e in manifest.entries]
    elif rule is SplitRule.BY_CAMERA:
        keep = set(training_ids or NTU_XVIEW_TRAIN_CAMERAS)
        keys = [e.camera_id for e in manifest.entries]
    else:
        if training_ids is None:
            raise ManifestError("An explicit split needs the list of training paths.")
        keep = {os.path.normpath(p) for p in training_ids}
        keys = [os.path.normpath(e.path) for e in manifest.entries]
    train = [e for e, key in zip(manifest.entries, keys) if key in keep]
    held_out = [e for e, key in zip(manifest.entries, keys) if key not in keep]
    return DatasetManifest(train, rule), DatasetManifest(held_out, rule)


# Rest pose in meters, x to the performer's right, y up, z away from the camera.
REST_POSE = np.array(
    [
        [0.00, 0.00, 3.00], [0.00, 0.25, 3.00], [0.00, 0.60, 3.00], [0.00, 0.75, 3.00],
        [-0.18, 0.50, 3.00], [-0.25, 0.25, 3.00], [-0.28, 0.02, 3.00], [-0.29, -0.05, 3.00],
        [0.18, 0.50, 3.00], [0.25, 0.25, 3.00], [0.28, 0.02, 3.00], [0.29, -0.05, 3.00],
        [-0.10, -0.05, 3.00], [-0.10, -0.50, 3.00], [-0.10, -0.90, 3.00], [-0.10, -0.95, 2.90],
        [0.10, -0.05, 3.00], [0.10, -0.50, 3.00], [0.10, -0.90, 3.00], [0.10, -0.95, 2.90],
        [0.00, 0.50, 3.00], [-0.30, -0.13, 3.00], [-0.26, -0.08, 2.98], [0.30, -0.13, 3.00],
        [0.26, -0.08, 2.98],
    ]
)
LEFT_TIP, RIGHT_TIP, LEFT_FOOT, RIGHT_FOOT = 21, 23, 15, 19


def _smoothstep(frames: int, rng: np.random.Generator) -> np.ndarray:
    onset = rng.uniform(0.0, 0.3) * frames
    duration = rng.uniform(0.4, 0.6) * frames
    s = np.clip((np.arange(frames) - onset) / duration, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _oscillation(frames: int, rng: np.random.Generator, amplitude: float) -> Tuple[np.ndarray, float, float]:
    cycles = rng.uniform(1.0, 3.0)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    wave = amplitude * np.sin(2.0 * math.pi * cycles * np.arange(frames) / frames + phase)
    return wave, cycles, phase


def _random_direction(rng: np.random.Generator) -> np.ndarray:
    direction = rng.normal(size = 3)
    return direction / np.linalg.norm(direction)


def _hands_converge(frames: int, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    motion = np.zeros((frames, 25, 3))
    meet = np.array([0.0, rng.uniform(0.0, 0.25), 2.75 + rng.uniform(-0.05, 0.05)])
    share = rng.uniform(0.6, 0.9)
    s = _smoothstep(frames, rng)[:, None]
    for tip, side in ((LEFT_TIP, -1.0), (RIGHT_TIP, 1.0)):
        target = meet + np.array([side * 0.03, 0.0, 0.0])
        motion[:, tip] = s * share * (target - REST_POSE[tip])
    return motion


def _hands_independent(frames: int, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    motion = np.zeros((frames, 25, 3))
    for tip in (LEFT_TIP, RIGHT_TIP):
        wave, _, _ = _oscillation(frames, rng, amplitude)
        motion[:, tip] = wave[:, None] * _random_direction(rng)
    return motion


def _hands_mirror(frames: int, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    motion = np.zeros((frames, 25, 3))
    wave, _, _ = _oscillation(frames, rng, amplitude)
    direction = _random_direction(rng)
    motion[:, LEFT_TIP] = wave[:, None] * direction
    motion[:, RIGHT_TIP] = wave[:, None] * direction * np.array([-1.0, 1.0, 1.0])
    return motion


def _foot_oscillates(frames: int, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    motion = np.zeros((frames, 25, 3))
    foot = LEFT_FOOT if rng.random() < 0.5 else RIGHT_FOOT
    wave, _, _ = _oscillation(frames, rng, amplitude)
    motion[:, foot, 1] = np.abs(wave)
    motion[:, foot, 2] = -0.5 * np.abs(wave)
    return motion


MOTION_PROGRAMS: Dict[str, Callable[[int, np.random.Generator, float], np.ndarray]] = {
    "hands_converge": _hands_converge,
    "hands_independent": _hands_independent,
    "hands_mirror": _hands_mirror,
    "foot_oscillates": _foot_oscillates,
}


def _check_spec(spec: SyntheticSpec) -> None:
    if len(spec.classes) < 2:
        raise InvalidSpec(f"A synthetic dataset needs at least 2 classes, got {len(spec.classes)}.")
    if len(set(spec.classes)) != len(spec.classes):
        raise InvalidSpec(f"Class programs repeat: {spec.classes}.")
    unknown = [name for name in spec.classes if name not in MOTION_PROGRAMS]
    if unknown:
        raise InvalidSpec(f"Unknown motion programs {unknown}; choose from {sorted(MOTION_PROGRAMS)}.")
    if spec.samples_per_class < 1 or spec.frames < 3:
        raise InvalidSpec("samples_per_class must be positive and frames at least 3.")
    if spec.noise < 0 or spec.amplitude <= 0:
        raise InvalidSpec("noise must be non-negative and amplitude positive.")


def _synthetic_sample(program: Callable, spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    frames = spec.frames
    pose = REST_POSE * rng.uniform(0.9, 1.1)
    offset = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.05, 0.05), rng.uniform(-0.3, 0.3)])
    sway = 0.02 * np.sin(2.0 * math.pi * rng.uniform(0.2, 1.0) * np.arange(frames) / frames + rng.uniform(0.0, 6.3))
    joints = pose[None] + offset + program(frames, rng, spec.amplitude)
    joints[:, :, 0] += sway[:, None]
    joints += rng.normal(scale = spec.noise, size = joints.shape)
    data = np.zeros((3, frames, 25, 2))
    data[:, :, :, 0] = joints.transpose(2, 0, 1)
    return data


def generate_synthetic_dataset(spec: SyntheticSpec, rng_seed: int) -> Tuple[List[FeatureTensor], List[int]]:
    """Generate raw tensors whose classes differ only in the motion of edge nodes.

    Samples are interleaved by class, so every prefix of whole rounds is balanced. Every class
    shares the same pose, translation, sway and noise distributions; only the designated edge
    nodes follow a class-specific program.

    ### Raises:
    - `InvalidSpec`: Fewer than 2 classes, unknown or repeated programs, or non-positive sizes.
    """
    _check_spec(spec)
    rng = np.random.default_rng(rng_seed)
    tensors, labels = [], []
    for _ in range(spec.samples_per_class):
        for label, name in enumerate(spec.classes):
            tensors.append(FeatureTensor(_synthetic_sample(MOTION_PROGRAMS[name], spec, rng)))
            labels.append(label)
    return tensors, labels


def _load_entry(entry: ManifestEntry, target_frames: int, max_bodies: int) -> Tuple[FeatureTensor, int, str]:
    seq = read_ntu_skeleton(entry.path, entry.label)
    return to_tensor(seq, target_frames, max_bodies), entry.label, seq.source_id


def load_manifest_tensors(
    manifest: DatasetManifest,
    target_frames: int = DEFAULT_TARGET_FRAMES,
    max_bodies: int = DEFAULT_BODY_CAPACITY,
    jobs: Optional[int] = 1,
    progress: bool = False,
) -> Tuple[List[FeatureTensor], List[int], List[str]]:
    """Parse every file of a manifest into raw tensors, returning tensors, labels and sample ids in manifest order."""
    loaded = parallel_map(
        partial(_load_entry, target_frames = target_frames, max_bodies = max_bodies),
        manifest.entries,
        jobs = jobs,
        desc = "parse",
        progress = progress,
    )
    tensors = [tensor for tensor, _, _ in loaded]
    labels = [label for _, label, _ in loaded]
    ids = [source for _, _, source in loaded]
    return tensors, labels, ids


def sample_id(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def unique_ids(paths: Sequence[str]) -> List[str]:
    """Sample ids from file stems, which must be unique within a manifest."""
    ids = [sample_id(p) for p in paths]
    if len(set(ids)) != len(ids):
        raise ManifestError("Sample ids (file stems) must be unique within a manifest.")
    return ids

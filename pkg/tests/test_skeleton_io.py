import io
import os

import numpy as np
import pytest

from spstgcn.dataclasses import DatasetManifest, FeatureTensor, FrameRecord, ManifestEntry, SkeletonSequence, SyntheticSpec
from spstgcn.enums import SplitRule
from spstgcn.errors import EmptySequence, InvalidSpec, MalformedFile, ManifestError, NonFiniteCoordinate
from spstgcn.skeleton_io import (
    LEFT_TIP,
    RIGHT_TIP,
    generate_synthetic_dataset,
    load_manifest,
    manifest_from_directory,
    parse_ntu_skeleton_file,
    resample_indices,
    split_manifest,
    tensor_to_sequence,
    to_tensor,
    write_manifest,
    write_ntu_skeleton_file,
)


def skeleton_text(frames, joint_count = 25, declared_frames = None):
    """Build an NTU file; `frames` is a list of frames, each a list of `(body_id, joints)` pairs."""
    lines = [str(len(frames) if declared_frames is None else declared_frames)]
    for bodies in frames:
        lines.append(str(len(bodies)))
        for body_id, joints in bodies:
            lines.append(f"{body_id} 0 1 1 1 1 0 0.02 -0.1 2")
            lines.append(str(joint_count))
            for x, y, z in joints:
                lines.append(f"{x} {y} {z} 240.1 150.2 900.3 500.4 0.1 0.2 0.3 0.9 2")
    return "\n".join(lines) + "\n"


def body(offset, joint_count = 25):
    return offset + np.arange(joint_count * 3, dtype = float).reshape(joint_count, 3) / 100.0


@pytest.fixture
def two_frame_file():
    return skeleton_text([[(72057594037931101, body(0.5))], [(72057594037931101, body(0.25))]])


def test_parse_two_frames(two_frame_file):
    seq = parse_ntu_skeleton_file(two_frame_file, source_id = "S001C001P001R001A001")
    assert len(seq.frames) == 2
    assert seq.joint_count == 25
    assert seq.frames[0].bodies[0][0] == 72057594037931101
    np.testing.assert_array_equal(seq.frames[1].bodies[0][1], body(0.25))


def test_parse_accepts_bytes_and_streams(two_frame_file):
    from_bytes = parse_ntu_skeleton_file(two_frame_file.encode("ascii"))
    from_stream = parse_ntu_skeleton_file(io.BytesIO(two_frame_file.encode("ascii")))
    assert len(from_bytes.frames) == len(from_stream.frames) == 2


def test_parse_frame_count_equals_first_line(two_frame_file):
    declared = int(two_frame_file.splitlines()[0])
    assert len(parse_ntu_skeleton_file(two_frame_file).frames) == declared


def generate_malformed_tests():
    cases = []
    # Declares 3 frames but holds 2.
    cases.append(skeleton_text([[(1, body(0.0))], [(1, body(0.0))]], declared_frames = 3))
    # Declares 1 frame but holds 2.
    cases.append(skeleton_text([[(1, body(0.0))], [(1, body(0.0))]], declared_frames = 1))
    # Joint count disagrees with the joint lines.
    cases.append(skeleton_text([[(1, body(0.0, 24))]], joint_count = 25))
    # Joint line too short.
    cases.append("1\n1\n1 0 0 0 0 0 0 0 0 2\n1\n0.1 0.2 0.3\n")
    # Non-numeric count.
    cases.append("x\n")
    return cases


@pytest.mark.parametrize("text", generate_malformed_tests())
def test_parse_malformed(text):
    with pytest.raises(MalformedFile):
        parse_ntu_skeleton_file(text)


def test_parse_non_finite():
    joints = body(0.0)
    joints[3, 1] = np.nan
    with pytest.raises(NonFiniteCoordinate):
        parse_ntu_skeleton_file(skeleton_text([[(1, joints)]]))


def test_parse_frame_without_bodies():
    seq = parse_ntu_skeleton_file(skeleton_text([[], [(4, body(0.0))]]))
    assert seq.frames[0].bodies == []
    assert seq.frames[1].bodies[0][0] == 4


def sequence(frame_count, bodies_per_frame = 1, moving_body = None):
    frames = []
    for t in range(frame_count):
        bodies = []
        for b in range(bodies_per_frame):
            speed = 0.1 if b == moving_body else 0.0
            bodies.append((b + 1, body(b + speed * t)))
        frames.append(FrameRecord(bodies = bodies))
    return SkeletonSequence(frames = frames, body_capacity = max(2, bodies_per_frame))


def test_to_tensor_pads_short_sequences():
    x = to_tensor(sequence(10), target_frames = 16)
    assert x.shape == (3, 16, 25, 2)
    np.testing.assert_array_equal(x.data[:, :10, :, 0], np.broadcast_to(body(0.0).T[:, None], (3, 10, 25)))
    assert not np.any(x.data[:, 10:])
    assert not np.any(x.data[..., 1])


def test_to_tensor_subsamples_long_sequences():
    seq = sequence(100, moving_body = 0)
    x = to_tensor(seq, target_frames = 10)
    assert x.shape == (3, 10, 25, 2)
    for slot, frame in enumerate(resample_indices(100, 10)):
        np.testing.assert_array_equal(x.data[:, slot, :, 0], seq.frames[frame].bodies[0][1].T)


def test_to_tensor_orders_bodies_by_motion_energy():
    seq = sequence(8, bodies_per_frame = 3, moving_body = 2)
    x = to_tensor(seq, target_frames = 8, max_bodies = 2)
    np.testing.assert_array_equal(x.data[:, 0, :, 0], seq.frames[0].bodies[2][1].T)
    # Equal energies keep file order.
    np.testing.assert_array_equal(x.data[:, 0, :, 1], seq.frames[0].bodies[0][1].T)


def test_to_tensor_empty_sequence():
    seq = SkeletonSequence(frames = [FrameRecord(), FrameRecord()])
    with pytest.raises(EmptySequence):
        to_tensor(seq, target_frames = 4)


def test_written_file_round_trips():
    tensors, labels = generate_synthetic_dataset(SyntheticSpec(samples_per_class = 1, frames = 12), rng_seed = 3)
    seq = tensor_to_sequence(tensors[0], labels[0], "sample")
    parsed = parse_ntu_skeleton_file(write_ntu_skeleton_file(seq))
    np.testing.assert_array_equal(to_tensor(parsed, target_frames = 12).data, tensors[0].data)


@pytest.fixture
def synthetic():
    return SyntheticSpec(samples_per_class = 4, frames = 16)


def test_synthetic_is_deterministic(synthetic):
    first, first_labels = generate_synthetic_dataset(synthetic, rng_seed = 7)
    second, second_labels = generate_synthetic_dataset(synthetic, rng_seed = 7)
    assert first_labels == second_labels
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.data, b.data)


def test_synthetic_is_balanced_and_interleaved(synthetic):
    tensors, labels = generate_synthetic_dataset(synthetic, rng_seed = 0)
    assert len(tensors) == 12
    assert labels[:3] == [0, 1, 2]
    assert [labels.count(k) for k in range(3)] == [4, 4, 4]
    assert all(t.shape == (3, 16, 25, 2) for t in tensors)


def test_synthetic_hands_converge():
    spec = SyntheticSpec(classes = ("hands_converge", "foot_oscillates"), samples_per_class = 5, frames = 64, noise = 0.0)
    tensors, labels = generate_synthetic_dataset(spec, rng_seed = 1)
    for tensor, label in zip(tensors, labels):
        if label == 0:
            gap = np.linalg.norm(tensor.data[:, :, LEFT_TIP, 0] - tensor.data[:, :, RIGHT_TIP, 0], axis = 0)
            assert gap[-1] < gap[0]


def generate_invalid_spec_tests():
    cases = []
    cases.append(SyntheticSpec(classes = ("hands_converge",)))
    cases.append(SyntheticSpec(classes = ("hands_converge", "waving")))
    cases.append(SyntheticSpec(classes = ("hands_converge", "hands_converge")))
    cases.append(SyntheticSpec(samples_per_class = 0))
    cases.append(SyntheticSpec(frames = 2))
    cases.append(SyntheticSpec(amplitude = 0.0))
    return cases


@pytest.mark.parametrize("spec", generate_invalid_spec_tests())
def test_synthetic_invalid_spec(spec):
    with pytest.raises(InvalidSpec):
        generate_synthetic_dataset(spec, rng_seed = 0)


def test_manifest_round_trip(tmp_path):
    manifest = DatasetManifest(
        entries = [ManifestEntry(str(tmp_path / "a.skeleton"), 0, 1, 2), ManifestEntry(str(tmp_path / "b.skeleton"), 2, 3, 1)]
    )
    write_manifest(manifest, str(tmp_path / "m.tsv"))
    loaded = load_manifest(str(tmp_path / "m.tsv"), num_classes = 3)
    assert loaded.entries == manifest.entries
    assert loaded.labels == [0, 2]


def test_manifest_relative_paths(tmp_path):
    (tmp_path / "m.tsv").write_text("a.skeleton\t1\t0\t0\n")
    loaded = load_manifest(str(tmp_path / "m.tsv"))
    assert loaded.entries[0].path == os.path.normpath(str(tmp_path / "a.skeleton"))


def generate_bad_manifest_tests():
    cases = []
    cases.append("a.skeleton\t0\t0\n")
    cases.append("a.skeleton\tzero\t0\t0\n")
    cases.append("a.skeleton\t0\t0\t0\na.skeleton\t1\t0\t0\n")
    cases.append("a.skeleton\t5\t0\t0\n")
    cases.append("a.skeleton\t-1\t0\t0\n")
    return cases


@pytest.mark.parametrize("content", generate_bad_manifest_tests())
def test_manifest_errors(tmp_path, content):
    (tmp_path / "m.tsv").write_text(content)
    with pytest.raises(ManifestError):
        load_manifest(str(tmp_path / "m.tsv"), num_classes = 3)


def test_manifest_from_directory(tmp_path):
    for name in ("S001C002P003R001A010.skeleton", "S001C001P001R002A001.skeleton", "notes.txt"):
        (tmp_path / name).write_text("0\n")
    manifest = manifest_from_directory(str(tmp_path))
    assert [(e.label, e.subject_id, e.camera_id) for e in manifest.entries] == [(0, 1, 1), (9, 3, 2)]


@pytest.fixture
def ntu_manifest():
    return DatasetManifest(
        entries = [
            ManifestEntry("a", 0, subject_id = 1, camera_id = 1),
            ManifestEntry("b", 1, subject_id = 3, camera_id = 2),
            ManifestEntry("c", 2, subject_id = 2, camera_id = 3),
        ]
    )


def test_split_by_subject(ntu_manifest):
    train, held_out = split_manifest(ntu_manifest, SplitRule.BY_SUBJECT)
    assert [e.path for e in train.entries] == ["a", "c"]
    assert [e.path for e in held_out.entries] == ["b"]


def test_split_by_camera(ntu_manifest):
    train, held_out = split_manifest(ntu_manifest, SplitRule.BY_CAMERA)
    assert [e.path for e in train.entries] == ["b", "c"]
    assert [e.path for e in held_out.entries] == ["a"]


def test_split_explicit(ntu_manifest):
    train, held_out = split_manifest(ntu_manifest, SplitRule.EXPLICIT, ["b"])
    assert [e.path for e in train.entries] == ["b"]
    with pytest.raises(ManifestError):
        split_manifest(ntu_manifest, SplitRule.EXPLICIT)


def test_feature_tensor_rejects_non_finite():
    data = np.zeros((3, 2, 25, 2))
    data[0, 0, 0, 0] = np.inf
    with pytest.raises(NonFiniteCoordinate):
        FeatureTensor(data)

import struct

import numpy as np
import pytest

from spstgcn.dataclasses import ModelConfig
from spstgcn.errors import CacheError
from spstgcn.graph import graph_to_text, ntu_graph
from spstgcn.nn.checkpoint import MAGIC, load_checkpoint, named_blocks, save_checkpoint
from spstgcn.nn.model import SpStGcnModel, model_forward, predict


@pytest.fixture
def trained():
    cfg = ModelConfig(in_channels = 6, init_channels = 4, blocks = ((6, 2),), temporal_kernel = 3, dropout = 0.1, num_classes = 4)
    model = SpStGcnModel(cfg, ntu_graph(), seed = 2)
    # One training-mode pass moves the running statistics away from their defaults.
    model_forward(model, np.random.default_rng(0).standard_normal((2, 6, 8, 25, 2)), np.tile(np.eye(25), (2, 1, 1)))
    return model


@pytest.fixture
def saved(tmp_path, trained):
    path = tmp_path / "joint.ckpt"
    save_checkpoint(str(path), trained)
    return path


def header_size(model):
    return len(MAGIC) + 4 + 4 + len(model.cfg.to_text().encode()) + 4 + len(graph_to_text(model.graph).encode())


def test_round_trip(saved, trained):
    loaded = load_checkpoint(str(saved))
    assert loaded.cfg == trained.cfg
    assert loaded.graph == trained.graph
    expected = named_blocks(trained)
    actual = named_blocks(loaded)
    assert set(actual) == set(expected)
    for name, value in expected.items():
        np.testing.assert_array_equal(actual[name], value)
    assert np.any(actual["buffer:initial.input_bn.running_mean"])
    x = np.random.default_rng(1).standard_normal((2, 6, 8, 25, 2))
    np.testing.assert_array_equal(predict(loaded, x, np.tile(np.eye(25), (2, 1, 1))), predict(trained, x, np.tile(np.eye(25), (2, 1, 1))))


def test_bad_magic(saved):
    saved.write_bytes(b"NOTACKPT" + saved.read_bytes()[8:])
    with pytest.raises(CacheError):
        load_checkpoint(str(saved))


def test_bad_version(saved):
    blob = saved.read_bytes()
    saved.write_bytes(blob[:8] + struct.pack("<I", 99) + blob[12:])
    with pytest.raises(CacheError):
        load_checkpoint(str(saved))


@pytest.mark.parametrize("keep", [4, 10, 40, -1])
def test_truncated(saved, keep):
    blob = saved.read_bytes()
    saved.write_bytes(blob[:keep])
    with pytest.raises(CacheError):
        load_checkpoint(str(saved))


def test_missing_blocks(saved, trained):
    blob = saved.read_bytes()
    offset = header_size(trained)
    (count,) = struct.unpack_from("<I", blob, offset)
    saved.write_bytes(blob[:offset] + struct.pack("<I", count - 1) + blob[offset + 4:])
    with pytest.raises(CacheError):
        load_checkpoint(str(saved))


def test_broken_header(tmp_path):
    path = tmp_path / "broken.ckpt"
    text = b"garbage"
    path.write_bytes(MAGIC + struct.pack("<I", 1) + struct.pack("<I", len(text)) + text)
    with pytest.raises(CacheError):
        load_checkpoint(str(path))


def test_unknown_block(saved, trained):
    blob = saved.read_bytes()
    offset = header_size(trained)
    (count,) = struct.unpack_from("<I", blob, offset)
    extra = b"bogus"
    block = struct.pack("<H", len(extra)) + extra + struct.pack("<B", 1) + struct.pack("<1I", 2) + np.zeros(2, "<f8").tobytes()
    saved.write_bytes(blob[:offset] + struct.pack("<I", count + 1) + blob[offset + 4:] + block)
    with pytest.raises(CacheError):
        load_checkpoint(str(saved))

"""Versioned binary container for trained models."""

import logging
import struct
from typing import Dict, Tuple

import numpy as np

from spstgcn.dataclasses import ModelConfig
from spstgcn.errors import CacheError, ConfigError, GraphError
from spstgcn.graph import graph_from_text, graph_to_text
from spstgcn.nn.model import SpStGcnModel
from spstgcn.utils import from_le_bytes, to_le_bytes

logger = logging.getLogger(__name__)

MAGIC = b"SPSTCKPT"
VERSION = 1


def _text_block(text: str) -> bytes:
    encoded = text.encode("utf-8")
    return struct.pack("<I", len(encoded)) + encoded


def named_blocks(model: SpStGcnModel) -> Dict[str, np.ndarray]:
    """Every parameter and buffer of `model`, keyed by its dotted name."""
    blocks = {name: param.value for name, param in model.named_parameters()}
    blocks.update({f"buffer:{name}": buffer for name, buffer in model.named_buffers()})
    return blocks


def save_checkpoint(path: str, model: SpStGcnModel) -> None:
    """Write `model` as magic, version, config text, graph text, then `(name, shape, <f8 data)` blocks."""
    blocks = named_blocks(model)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(_text_block(model.cfg.to_text()))
        f.write(_text_block(graph_to_text(model.graph)))
        f.write(struct.pack("<I", len(blocks)))
        for name, value in blocks.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)) + encoded)
            f.write(struct.pack("<B", value.ndim))
            f.write(struct.pack(f"<{value.ndim}I", *value.shape))
            f.write(to_le_bytes(value))
    logger.debug("Wrote %d blocks to %s.", len(blocks), path)


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.path = path
        self.offset = 0

    def unpack(self, fmt: str) -> Tuple:
        try:
            values = struct.unpack_from(fmt, self.blob, self.offset)
        except struct.error:
            raise CacheError(f"{self.path} is truncated at byte {self.offset}.") from None
        self.offset += struct.calcsize(fmt)
        return values

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.blob):
            raise CacheError(f"{self.path} is truncated at byte {self.offset}.")
        data = self.blob[self.offset:self.offset + size]
        self.offset += size
        return data

    def text(self) -> str:
        (length,) = self.unpack("<I")
        return self.take(length).decode("utf-8")


def load_checkpoint(path: str) -> SpStGcnModel:
    """Rebuild the model stored at `path`.

    ### Raises:
    - `CacheError`: Wrong magic or version, truncated data, or blocks that do not match the model.
    """
    with open(path, "rb") as f:
        reader = _Reader(f.read(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CacheError(f"{path} is not a model checkpoint.")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CacheError(f"{path} has checkpoint version {version}, expected {VERSION}.")
    try:
        cfg = ModelConfig.from_text(reader.text())
        graph = graph_from_text(reader.text())
    except (ConfigError, GraphError) as e:
        raise CacheError(f"{path} has a broken header: {e.message}") from None

    model = SpStGcnModel(cfg, graph)
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    (count,) = reader.unpack("<I")
    seen = set()
    for _ in range(count):
        (length,) = reader.unpack("<H")
        name = reader.take(length).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        value = from_le_bytes(reader.take(int(np.prod(shape)) * 8), shape)
        if name.startswith("buffer:"):
            target = buffers.get(name[len("buffer:"):])
        else:
            target = params[name].value if name in params else None
        if target is None or target.shape != value.shape:
            raise CacheError(f"{path} holds block {name!r} of shape {shape} that the model does not have.")
        target[...] = value
        seen.add(name)
    missing = set(named_blocks(model)) - seen
    if missing:
        raise CacheError(f"{path} is missing blocks: {sorted(missing)}.")
    return model

"""Versioned binary checkpoint container.

Layout (little-endian): magic ``TKGM``, u32 format version, 32-byte config
fingerprint, i64 seed, i64 epoch, f64 validation MRR, u32 block count, then
per block: u16 name length, utf-8 name, u8 ndim, i64 dims, raw float64 data
in C order. Writes go through a temp file and an atomic rename.
"""

import os
import struct

import numpy as np

MAGIC = b"TKGM"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated, or incompatible checkpoint file."""


def save_checkpoint(path, state, seed, epoch, val_mrr):
    fingerprint = state.config.fingerprint(state.num_entities, state.num_base_relations)
    parts = [MAGIC, struct.pack("<I", VERSION), fingerprint]
    parts.append(struct.pack("<qqd", int(seed), int(epoch), float(val_mrr)))
    names = sorted(state.params)
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        data = state.params[name].tensor.data
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}q", *data.shape))
        parts.append(np.ascontiguousarray(data, dtype="<f8").tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, size):
        if self.offset + size > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.blob[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, config, num_entities, num_base_relations):
    """Read parameter blocks; refuses on fingerprint mismatch or truncation.

    Returns (values dict, meta dict with seed/epoch/val_mrr).
    """
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    fingerprint = reader.take(32)
    expected = config.fingerprint(num_entities, num_base_relations)
    if fingerprint != expected:
        raise CheckpointError(
            f"{path}: config fingerprint mismatch (checkpoint was written under a "
            "different configuration or vocabulary)"
        )
    seed, epoch, val_mrr = reader.unpack("<qqd")
    (num_blocks,) = reader.unpack("<I")
    values = {}
    for _ in range(num_blocks):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}q") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        raw = reader.take(count * 8)
        values[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if reader.offset != len(reader.blob):
        raise CheckpointError(f"{path}: trailing bytes after last block")
    return values, {"seed": seed, "epoch": epoch, "val_mrr": val_mrr}

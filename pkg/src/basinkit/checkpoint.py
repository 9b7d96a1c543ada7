"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"BPCK" | version u32 | header_len u32 | header (UTF-8 JSON) | payload | crc32 u32

The payload is ``param_count`` float32 values (little-endian) in canonical flat
order; the CRC-32 covers header and payload.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .nn import Architecture, param_count
from .train import Lineage, ModelCheckpoint

MAGIC = b"BPCK"
VERSION = 1
SUPPORTED_VERSIONS = (1,)
_PREFIX = struct.Struct("<4sII")


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class HeaderError(CheckpointError):
    pass


def _header(c: ModelCheckpoint) -> dict:
    return {
        "arch": c.arch.to_dict(),
        "lineage": {"kind": c.lineage.kind, "seed": c.lineage.seed, "pretrain_id": c.lineage.pretrain_id},
        "epoch": int(c.epoch),
        "tag": c.tag,
        "seed": c.lineage.seed,
        "task_id": c.task_id,
        "model_id": c.model_id,
        "val_auc_at_save": None if c.val_auc_at_save is None else float(c.val_auc_at_save),
        "train_config_digest": c.train_config_digest,
    }


def to_bytes(c: ModelCheckpoint) -> bytes:
    header = json.dumps(_header(c), sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.asarray(c.weights, dtype="<f4").tobytes()
    body = header + payload
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + body + struct.pack("<I", zlib.crc32(body))


def from_bytes(blob: bytes, source: str = "<bytes>") -> ModelCheckpoint:
    if len(blob) < _PREFIX.size:
        raise TruncatedError(f"{source}: {len(blob)} bytes is shorter than the fixed prefix")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version not in SUPPORTED_VERSIONS:
        raise VersionError(f"{source}: format version {version} unsupported (supported: {SUPPORTED_VERSIONS})")
    if len(blob) < _PREFIX.size + header_len + 4:
        raise TruncatedError(f"{source}: file ends inside the header")
    body = blob[_PREFIX.size:-4]
    (crc,) = struct.unpack("<I", blob[-4:])
    header_bytes = body[:header_len]
    try:
        h = json.loads(header_bytes.decode("utf-8"))
        arch = Architecture.from_dict(h["arch"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
        # a damaged header is reported as a checksum failure when the CRC disagrees
        if zlib.crc32(body) != crc:
            raise ChecksumError(f"{source}: CRC-32 mismatch") from None
        raise HeaderError(f"{source}: unreadable header: {e}") from None
    expected = 4 * param_count(arch)
    payload = body[header_len:]
    if len(payload) < expected:
        raise TruncatedError(f"{source}: payload has {len(payload)} bytes, architecture needs {expected}")
    if zlib.crc32(body) != crc:
        raise ChecksumError(f"{source}: CRC-32 mismatch")
    if len(payload) != expected:
        raise HeaderError(f"{source}: payload has {len(payload)} bytes, architecture needs {expected}")
    weights = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    lin = h["lineage"]
    return ModelCheckpoint(
        arch=arch,
        weights=weights,
        lineage=Lineage(lin["kind"], lin["seed"], lin.get("pretrain_id")),
        epoch=h["epoch"],
        tag=h["tag"],
        val_auc_at_save=h["val_auc_at_save"],
        train_config_digest=h["train_config_digest"],
        task_id=h["task_id"],
        model_id=h.get("model_id", ""),
    )


def save_checkpoint(c: ModelCheckpoint, path) -> None:
    Path(path).write_bytes(to_bytes(c))


def load_checkpoint(path) -> ModelCheckpoint:
    return from_bytes(Path(path).read_bytes(), str(path))

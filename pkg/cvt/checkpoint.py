"""
Binary checkpoint archive.

Layout (all integers little-endian):

    b"CVTK"  u32 version
    u32 config length, config YAML (utf-8)
    u32 record count
    per record: u32 name length, name (utf-8), u32 rank, rank x u64 dims, raw f32 payload
    u64 checksum of every preceding byte (blake2b, 8-byte digest)

Records hold the parameters followed by the batchnorm running statistics, in
the model's traversal order.
"""
import hashlib
import logging
import struct
from typing import Dict, Optional, Tuple

import numpy as np
import yaml

from cvt.config import ModelConfig
from cvt.errors import (
    CheckpointChecksumError,
    CheckpointConfigMismatchError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    CvtError,
)
from cvt.model import CvtModel, build_model

logger = logging.getLogger(__name__)

MAGIC = b"CVTK"
VERSION = 1
CHECKSUM_SIZE = 8


def checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=CHECKSUM_SIZE).digest()


# ==========================
# Encoding
# ==========================
def encode_checkpoint(model: CvtModel) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    config_text = model.config.to_yaml().encode("utf-8")
    parts += [struct.pack("<I", len(config_text)), config_text]

    state = model.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, array in state.items():
        raw_name = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw_name)), raw_name, struct.pack("<I", array.ndim)]
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())

    body = b"".join(parts)
    return body + checksum(body)


def save_checkpoint(model: CvtModel, path: str) -> str:
    """Write the archive and return the hex checksum."""
    blob = encode_checkpoint(model)
    with open(path, "wb") as f:
        f.write(blob)
    digest = blob[-CHECKSUM_SIZE:].hex()
    logger.info("saved %s (%d bytes, checksum %s)", path, len(blob), digest)
    return digest


# ==========================
# Decoding
# ==========================
class _Reader:
    def __init__(self, blob: bytes):
        self.blob, self.pos = blob, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointTruncatedError(f"file ends at byte {len(self.blob)}, needed {self.pos + n}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_header(reader: _Reader) -> ModelConfig:
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError("not a checkpoint (bad magic bytes)")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}, expected {VERSION}")
    (config_len,) = reader.unpack("<I")
    try:
        return ModelConfig.from_yaml(reader.take(config_len).decode("utf-8"))
    except (ConfigError, UnicodeDecodeError, ValueError, TypeError, KeyError, AttributeError, yaml.YAMLError) as e:
        raise CheckpointFormatError(f"unreadable config header: {e}") from e


def _classify_bad_checksum(blob: bytes) -> CheckpointError:
    """
    A file whose checksum does not match is reported as truncated only when it
    is a consistent prefix of the archive its own header describes; anything
    else is corruption.
    """
    corrupted = CheckpointChecksumError("checksum mismatch: the file is corrupted")
    reader = _Reader(blob)
    try:
        config = _read_header(reader)
        expected = build_model(config, seed=0).state_dict()
    except CvtError:
        return corrupted

    try:
        if reader.unpack("<I") != (len(expected),):
            return corrupted
        for name, array in expected.items():
            raw_name = name.encode("utf-8")
            if reader.unpack("<I") != (len(raw_name),) or reader.take(len(raw_name)) != raw_name:
                return corrupted
            if reader.unpack("<I") != (array.ndim,) or reader.unpack(f"<{array.ndim}Q") != array.shape:
                return corrupted
            reader.take(4 * array.size)
        reader.take(CHECKSUM_SIZE)
    except CheckpointTruncatedError as e:
        return e
    return corrupted


def decode_checkpoint(blob: bytes) -> Tuple[ModelConfig, Dict[str, np.ndarray]]:
    """The checksum is verified before any field is interpreted."""
    if len(blob) < CHECKSUM_SIZE or blob[-CHECKSUM_SIZE:] != checksum(blob[:-CHECKSUM_SIZE]):
        raise _classify_bad_checksum(blob)

    reader = _Reader(blob[:-CHECKSUM_SIZE])
    state: Dict[str, np.ndarray] = {}
    try:
        config = _read_header(reader)
        (count,) = reader.unpack("<I")
        for _ in range(count):
            (name_len,) = reader.unpack("<I")
            name = reader.take(name_len).decode("utf-8")
            (rank,) = reader.unpack("<I")
            shape = reader.unpack(f"<{rank}Q")
            n = int(np.prod(shape, dtype=np.int64))
            state[name] = np.frombuffer(reader.take(4 * n), dtype="<f4").reshape(shape)
    except (CheckpointTruncatedError, UnicodeDecodeError, ValueError, struct.error) as e:
        raise CheckpointFormatError(f"malformed tensor records: {e}") from e
    if reader.pos != len(reader.blob):
        raise CheckpointFormatError(f"{len(reader.blob) - reader.pos} unexpected bytes after the last record")
    return config, state


def load_checkpoint(path: str, config: Optional[ModelConfig] = None) -> CvtModel:
    """
    Rebuild a model from `path`. When `config` is given it must equal the
    stored config, otherwise CheckpointConfigMismatchError.
    """
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e.strerror}") from e
    stored, state = decode_checkpoint(blob)
    if config is not None and config != stored:
        raise CheckpointConfigMismatchError(
            f"checkpoint holds {stored.name!r}, which does not match the requested config {config.name!r}"
        )

    model = build_model(stored, seed=0)
    try:
        model.load_state_dict(state)
    except Exception as e:
        raise CheckpointFormatError(f"tensor records do not fit the stored config: {e}") from e
    logger.info("loaded %s from %s", stored.name, path)
    return model

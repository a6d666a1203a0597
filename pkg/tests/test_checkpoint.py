import struct
from dataclasses import replace

import numpy as np
import pytest

from cvt.checkpoint import (
    CHECKSUM_SIZE,
    MAGIC,
    checksum,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from cvt.errors import (
    CheckpointChecksumError,
    CheckpointConfigMismatchError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from cvt.model import build_model
from cvt.tensor import no_grad


@pytest.fixture
def trained_like(tiny_config, rng):
    """A tiny model whose batchnorm buffers have moved away from their defaults."""
    model = build_model(tiny_config, seed=2)
    model(rng.standard_normal((4, 3, 32, 32)).astype(np.float32))
    return model


class TestRoundTrip:
    def test_eval_outputs_are_bit_identical(self, trained_like, tmp_path, rng):
        path = tmp_path / "m.cvtk"
        save_checkpoint(trained_like, str(path))
        restored = load_checkpoint(str(path))
        x = rng.standard_normal((2, 3, 32, 32)).astype(np.float32)
        with no_grad():
            a = trained_like.eval()(x).data
            b = restored.eval()(x).data
        np.testing.assert_array_equal(a, b)
        assert restored.config == trained_like.config

    def test_buffers_are_stored(self, trained_like):
        _, state = decode_checkpoint(encode_checkpoint(trained_like))
        name = "stages.0.blocks.0.attn.conv_proj_k.bn.running_mean"
        np.testing.assert_array_equal(state[name], dict(trained_like.named_buffers())[name])

    def test_checksum_is_returned_and_deterministic(self, tiny_config, tmp_path):
        a = save_checkpoint(build_model(tiny_config, seed=1), str(tmp_path / "a"))
        b = save_checkpoint(build_model(tiny_config, seed=1), str(tmp_path / "b"))
        assert a == b and len(a) == 16

    def test_expected_config_must_match(self, tiny_config, tmp_path):
        path = str(tmp_path / "m.cvtk")
        save_checkpoint(build_model(tiny_config), path)
        with pytest.raises(CheckpointConfigMismatchError):
            load_checkpoint(path, replace(tiny_config, num_classes=5))


class TestCorruption:
    @pytest.fixture
    def blob(self, tiny_config):
        return encode_checkpoint(build_model(tiny_config))

    @staticmethod
    def resign(body):
        return body + checksum(body)

    @staticmethod
    def field_offsets(blob):
        """Offsets of the header fields and of the first record's rank and first dim."""
        (config_len,) = struct.unpack_from("<I", blob, 8)
        count = 12 + config_len
        (name_len,) = struct.unpack_from("<I", blob, count + 4)
        rank = count + 8 + name_len
        return {"version": 4, "config_len": 8, "count": count, "rank": rank, "dim": rank + 4}

    def test_flipped_byte(self, blob):
        corrupted = bytearray(blob)
        corrupted[len(blob) - CHECKSUM_SIZE - 1] ^= 0xFF  # last payload byte
        with pytest.raises(CheckpointChecksumError):
            decode_checkpoint(bytes(corrupted))

    @pytest.mark.parametrize("field", ["magic", "version", "config_len", "count", "rank", "dim"])
    def test_flipped_structural_field_is_a_checksum_error(self, blob, field):
        offset = 0 if field == "magic" else self.field_offsets(blob)[field]
        for bit in (0x01, 0x80):
            corrupted = bytearray(blob)
            corrupted[offset] ^= bit
            with pytest.raises(CheckpointChecksumError):
                decode_checkpoint(bytes(corrupted))
            corrupted = bytearray(blob)
            corrupted[offset + 3] ^= bit
            with pytest.raises(CheckpointChecksumError):
                decode_checkpoint(bytes(corrupted))

    @pytest.mark.parametrize("fraction", [0.3, 0.5, 0.9])
    def test_truncated(self, blob, fraction):
        with pytest.raises(CheckpointTruncatedError):
            decode_checkpoint(blob[: int(len(blob) * fraction)])

    def test_missing_trailer_is_truncation(self, blob):
        with pytest.raises(CheckpointTruncatedError):
            decode_checkpoint(blob[:-3])

    def test_bad_magic(self, blob):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(self.resign(b"NOPE" + blob[4:-CHECKSUM_SIZE]))

    def test_future_version(self, blob):
        with pytest.raises(CheckpointVersionError):
            decode_checkpoint(self.resign(MAGIC + struct.pack("<I", 99) + blob[8:-CHECKSUM_SIZE]))

    def test_trailing_garbage_with_valid_checksum(self, blob):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(self.resign(blob[:-CHECKSUM_SIZE] + b"\x00" * 4))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(str(tmp_path / "absent.cvtk"))


@pytest.mark.slow
def test_every_single_byte_flip_is_a_checksum_error(micro_config):
    blob = encode_checkpoint(build_model(micro_config))
    for offset in range(len(blob)):
        corrupted = bytearray(blob)
        corrupted[offset] ^= 0xFF
        with pytest.raises(CheckpointChecksumError):
            decode_checkpoint(bytes(corrupted))


@pytest.mark.slow
def test_cvt13_checkpoint_does_not_load_as_cvt21(tmp_path):
    from cvt.presets import cvt13, cvt21

    path = str(tmp_path / "cvt13.cvtk")
    save_checkpoint(build_model(cvt13()), path)
    with pytest.raises(CheckpointConfigMismatchError):
        load_checkpoint(path, cvt21())

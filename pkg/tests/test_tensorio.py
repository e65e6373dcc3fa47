"""Round-trip and corruption tests for the binary tensor format."""

import numpy as np
import pytest

from c2am.tensorio import MAGIC, TensorFormatError, read_tensor, write_tensor


class TestRoundTrip:
    def test_random_3x4x5_bitwise(self, tmp_path):
        """read(write(x)) == x bitwise for float32 payloads."""
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 4, 5)).astype(np.float32)
        path = tmp_path / "t.c2am"
        write_tensor(path, x)
        back = read_tensor(path)
        assert back.dtype == np.float32
        assert back.shape == x.shape
        assert np.array_equal(back.view(np.uint32), x.view(np.uint32))

    def test_various_ranks(self, tmp_path):
        rng = np.random.default_rng(1)
        for shape in [(7,), (2, 3), (1, 4, 4), (2, 3, 4, 5)]:
            x = rng.standard_normal(shape).astype(np.float32)
            write_tensor(tmp_path / "t.c2am", x)
            assert np.array_equal(read_tensor(tmp_path / "t.c2am"), x)

    def test_header_layout(self, tmp_path):
        write_tensor(tmp_path / "t.c2am", np.zeros((2, 2), dtype=np.float32))
        raw = (tmp_path / "t.c2am").read_bytes()
        assert raw[:4] == MAGIC
        assert raw[4] == 1  # version
        assert raw[5] == 2  # rank
        assert raw[6:14] == b"\x02\x00\x00\x00\x02\x00\x00\x00"  # u32 LE dims


class TestErrors:
    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.c2am"
        write_tensor(path, np.ones((4, 4), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(TensorFormatError, match="size mismatch"):
            read_tensor(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "t.c2am"
        path.write_bytes(MAGIC + b"\x01")
        with pytest.raises(TensorFormatError):
            read_tensor(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.c2am"
        write_tensor(path, np.ones(3, dtype=np.float32))
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(TensorFormatError, match="magic"):
            read_tensor(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "t.c2am"
        write_tensor(path, np.ones(3, dtype=np.float32))
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(TensorFormatError, match="version"):
            read_tensor(path)

    def test_empty_dims_rejected(self, tmp_path):
        with pytest.raises(TensorFormatError):
            write_tensor(tmp_path / "t.c2am", np.float32(1.0))  # rank 0
        with pytest.raises(TensorFormatError):
            write_tensor(tmp_path / "t.c2am", np.zeros((0, 3), dtype=np.float32))

    def test_zero_dim_on_read(self, tmp_path):
        import struct

        path = tmp_path / "t.c2am"
        path.write_bytes(MAGIC + struct.pack("<BB", 1, 2) + struct.pack("<2I", 0, 3))
        with pytest.raises(TensorFormatError, match="zero-sized"):
            read_tensor(path)

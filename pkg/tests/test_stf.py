"""Round-trip and rejection behavior of the STF1 tensor file format."""

import struct

import numpy as np
import pytest

from s4video.stf import MAGIC, load_stf, save_stf
from s4video.tensor import Tensor


def test_roundtrip_is_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    for dtype in (np.float32, np.float64):
        for shape in ((), (5,), (3, 4), (2, 3, 4, 5)):
            arr = rng.standard_normal(shape).astype(dtype)
            p = tmp_path / "t.stf"
            save_stf(p, arr)
            back = load_stf(p)
            assert back.dtype == arr.dtype
            assert back.shape == arr.shape
            assert np.array_equal(
                back.view(np.uint8) if shape else back, arr.view(np.uint8) if shape else arr
            )


def test_roundtrip_preserves_nan_payload_bits(tmp_path):
    arr = np.array([np.nan, -0.0, np.inf], dtype=np.float64)
    p = tmp_path / "t.stf"
    save_stf(p, arr)
    back = load_stf(p)
    assert np.array_equal(back.view(np.uint64), arr.view(np.uint64))


def test_saves_tensor_objects(tmp_path):
    t = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    p = tmp_path / "t.stf"
    save_stf(p, t)
    assert np.array_equal(load_stf(p), t.numpy())


def test_loaded_array_is_writable(tmp_path):
    p = tmp_path / "t.stf"
    save_stf(p, np.zeros(3, dtype=np.float32))
    back = load_stf(p)
    back[0] = 1.0  # must not raise (frombuffer views are read-only)


def test_header_layout_is_stable(tmp_path):
    # 4 magic + 4 dtype + 4 rank + 4*rank extents, little-endian
    arr = np.arange(6, dtype=np.float64).reshape(2, 3)
    p = tmp_path / "t.stf"
    save_stf(p, arr)
    raw = p.read_bytes()
    assert raw[:4] == MAGIC
    code, rank = struct.unpack_from("<II", raw, 4)
    assert (code, rank) == (1, 2)
    assert struct.unpack_from("<2I", raw, 12) == (2, 3)
    assert raw[20:] == arr.tobytes()


def test_rejects_non_float(tmp_path):
    with pytest.raises(TypeError):
        save_stf(tmp_path / "t.stf", np.arange(4))


def test_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.stf"
    save_stf(p, np.zeros(2, dtype=np.float32))
    raw = bytearray(p.read_bytes())
    raw[:4] = b"NOPE"
    p.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="magic"):
        load_stf(p)


def test_rejects_unknown_dtype_code(tmp_path):
    p = tmp_path / "bad.stf"
    save_stf(p, np.zeros(2, dtype=np.float32))
    raw = bytearray(p.read_bytes())
    struct.pack_into("<I", raw, 4, 7)
    p.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="dtype code"):
        load_stf(p)


def test_rejects_absurd_rank(tmp_path):
    p = tmp_path / "bad.stf"
    save_stf(p, np.zeros(2, dtype=np.float32))
    raw = bytearray(p.read_bytes())
    struct.pack_into("<I", raw, 8, 1000)
    p.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="rank"):
        load_stf(p)


def test_rejects_truncated_payload(tmp_path):
    p = tmp_path / "bad.stf"
    save_stf(p, np.zeros(8, dtype=np.float64))
    raw = p.read_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="payload"):
        load_stf(p)


def test_rejects_trailing_garbage(tmp_path):
    p = tmp_path / "bad.stf"
    save_stf(p, np.zeros(8, dtype=np.float64))
    p.write_bytes(p.read_bytes() + b"\x00" * 4)
    with pytest.raises(ValueError, match="payload"):
        load_stf(p)


def test_rejects_tiny_file(tmp_path):
    p = tmp_path / "bad.stf"
    p.write_bytes(b"STF1\x00")
    with pytest.raises(ValueError, match="too short"):
        load_stf(p)


def test_error_names_offending_file(tmp_path):
    p = tmp_path / "whodunit.stf"
    p.write_bytes(b"junkjunkjunkjunk")
    with pytest.raises(ValueError, match="whodunit"):
        load_stf(p)

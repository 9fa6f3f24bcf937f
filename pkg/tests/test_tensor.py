import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casym.errors import DataError
from casym.tensor import channel_mean, ntf_byte_size, ntf_read, ntf_write

GOLDEN = "tests/data/golden.ntf"


def test_file_size_formula(tmp_path):
    cases = [
        (np.zeros((1, 1), dtype=np.float32), 4 + 1 + 1 + 16 + 4),
        (np.array([[0, 1], [2, 3]], dtype=np.uint8), 4 + 1 + 1 + 16 + 4),
        (np.zeros((3, 4, 4), dtype=np.float32), 4 + 1 + 1 + 24 + 192),
    ]
    for arr, expected in cases:
        path = tmp_path / "t.ntf"
        ntf_write(arr, path)
        assert path.stat().st_size == expected
        assert ntf_byte_size(arr.shape, arr.dtype) == expected


def test_round_trip_f32(tmp_path):
    rng = np.random.default_rng(0)
    t = rng.standard_normal((3, 4, 4)).astype(np.float32)
    path = tmp_path / "t.ntf"
    ntf_write(t, path)
    back = ntf_read(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, t)


def test_round_trip_u8(tmp_path):
    t = np.array([[0, 1], [2, 3]], dtype=np.uint8)
    path = tmp_path / "t.ntf"
    ntf_write(t, path)
    assert np.array_equal(ntf_read(path), t)


@settings(max_examples=60, deadline=None)
@given(
    dtype=st.sampled_from(["f4", "f8", "u1"]),
    shape=st.lists(st.integers(1, 5), min_size=1, max_size=4),
    seed=st.integers(0, 2**31 - 1),
)
def test_round_trip_property(tmp_path_factory, dtype, shape, seed):
    rng = np.random.default_rng(seed)
    if dtype == "u1":
        t = rng.integers(0, 256, size=shape).astype(np.uint8)
    else:
        t = rng.standard_normal(shape).astype(dtype)
    path = tmp_path_factory.mktemp("ntf") / "t.ntf"
    ntf_write(t, path)
    back = ntf_read(path)
    assert back.shape == tuple(shape)
    assert np.array_equal(back, t)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ntf"
    path.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(DataError, match="not an NTF file"):
        ntf_read(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.ntf"
    ntf_write(np.zeros((4, 4, 4), dtype=np.float32), path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 16])  # drop 4 of the 64 values
    with pytest.raises(DataError, match="size mismatch"):
        ntf_read(path)


def test_unknown_dtype_code(tmp_path):
    path = tmp_path / "t.ntf"
    ntf_write(np.zeros((2, 2), dtype=np.float32), path)
    blob = bytearray(path.read_bytes())
    blob[4] = 9
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError, match="unsupported dtype"):
        ntf_read(path)


def test_rejects_zero_extent_and_0d(tmp_path):
    with pytest.raises(DataError):
        ntf_write(np.zeros((2, 0), dtype=np.float32), tmp_path / "z.ntf")
    with pytest.raises(DataError):
        ntf_write(np.float32(1.0), tmp_path / "s.ntf")


def test_golden_file_parses_identically():
    """Pinned on-disk bytes: the golden file must parse to these exact values
    on every platform, and re-serialization must reproduce it byte for byte."""
    t = ntf_read(GOLDEN)
    assert t.dtype == np.float32
    assert t.shape == (2, 3, 2)
    expected = np.array(
        [0.0, 0.5, 1.0, -1.0, 3.25, -0.125, 2.0, 4.5, -2.75, 0.1, 6.0, -6.0],
        dtype=np.float32,
    ).reshape(2, 3, 2)
    assert np.array_equal(t, expected)
    import pathlib, tempfile

    with tempfile.TemporaryDirectory() as td:
        out = pathlib.Path(td) / "again.ntf"
        ntf_write(t, out)
        assert out.read_bytes() == pathlib.Path(GOLDEN).read_bytes()


def test_channel_mean():
    t = np.full((2, 3, 3), 0.5, dtype=np.float32)
    assert channel_mean(t, 0) == 0.5
    t2 = np.array([[[0.0, 1.0], [2.0, 3.0]]], dtype=np.float32)
    assert channel_mean(t2, 0) == 1.5
    with pytest.raises(DataError):
        channel_mean(t, 2)

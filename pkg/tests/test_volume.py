import numpy as np
import pytest

from casym.errors import ConfigError, DataError
from casym.tensor import ntf_write
from casym.volume import (
    dataset_split,
    load_samples,
    load_volume,
    read_pgm,
    save_samples,
    stack_2dplus,
    stack_all,
    synth_volume,
    write_pgm,
)


def test_pgm_round_trip_8bit(tmp_path):
    arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
    write_pgm(tmp_path / "a.pgm", arr, 255)
    back, maxval = read_pgm(tmp_path / "a.pgm")
    assert maxval == 255
    assert np.array_equal(back, arr)


def test_pgm_16bit_big_endian(tmp_path):
    # hand-built payload: P5 header then big-endian u16 values
    vals = np.array([[0, 1], [256, 65535]], dtype=np.uint16)
    blob = b"P5\n# comment\n2 2\n65535\n" + vals.astype(">u2").tobytes()
    (tmp_path / "b.pgm").write_bytes(blob)
    back, maxval = read_pgm(tmp_path / "b.pgm")
    assert maxval == 65535
    assert np.array_equal(back, vals)


def test_load_volume_normalizes(tmp_path):
    for i in range(2):
        write_pgm(tmp_path / f"s{i}.pgm", np.full((4, 4), 255, dtype=np.uint8))
    v = load_volume([tmp_path / "s0.pgm", tmp_path / "s1.pgm"])
    assert v.image.shape == (2, 4, 4)
    assert np.all(v.image == 1.0)


def test_load_volume_dimension_mismatch(tmp_path):
    write_pgm(tmp_path / "s0.pgm", np.zeros((4, 4), dtype=np.uint8))
    write_pgm(tmp_path / "s1.pgm", np.zeros((4, 5), dtype=np.uint8))
    with pytest.raises(DataError, match="mismatch"):
        load_volume([tmp_path / "s0.pgm", tmp_path / "s1.pgm"])


def test_load_volume_ntf(tmp_path):
    img = np.random.default_rng(0).random((8, 64, 64)).astype(np.float32)
    ntf_write(img, tmp_path / "vol.ntf")
    v = load_volume(tmp_path / "vol.ntf")
    assert v.shape == (8, 64, 64)
    assert np.array_equal(v.image, img)


def test_mask_slice_count_mismatch(tmp_path):
    img = np.zeros((3, 4, 4), dtype=np.float32)
    msk = np.zeros((2, 4, 4), dtype=np.uint8)
    ntf_write(img, tmp_path / "i.ntf")
    ntf_write(msk, tmp_path / "m.ntf")
    with pytest.raises(DataError, match="mismatch"):
        load_volume(tmp_path / "i.ntf", tmp_path / "m.ntf")


def _toy_volume(z=5, h=6, w=6, seed=0):
    rng = np.random.default_rng(seed)
    image = rng.random((z, h, w)).astype(np.float32)
    mask = (rng.random((z, h, w)) > 0.5).astype(np.uint8)
    from casym.volume import Volume

    return Volume(image=image, mask=mask)


def test_stack_channels_are_adjacent_slices():
    v = _toy_volume(z=3)
    s = stack_2dplus(v, 1, 1)
    assert s.n_channels == 3
    for k, z in enumerate((0, 1, 2)):
        assert np.array_equal(s.input[k], v.image[z])
    assert np.array_equal(s.center_mask, (v.mask[1] == 1).astype(np.uint8))


def test_stack_half_window_two():
    # five channels: two slices before and two after the center
    v = _toy_volume(z=5)
    s = stack_2dplus(v, 2, 2)
    assert s.n_channels == 5
    for k, z in enumerate((0, 1, 2, 3, 4)):
        assert np.array_equal(s.input[k], v.image[z])


def test_stack_edge_rejected():
    v = _toy_volume(z=3)
    with pytest.raises(DataError, match="edge"):
        stack_2dplus(v, 0, 1)
    with pytest.raises(DataError, match="edge"):
        stack_2dplus(v, 2, 1)


def test_stack_requires_mask():
    v = _toy_volume()
    v.mask = None
    with pytest.raises(DataError, match="mask"):
        stack_2dplus(v, 2, 1)


def test_middle_channel_is_center_slice():
    v = _toy_volume(z=7)
    for s in stack_all(v, 2):
        assert np.array_equal(s.input[2], v.image[s.center_index])


def test_reversed_volume_gives_channel_reversed_input():
    from casym.volume import Volume

    v = _toy_volume(z=7)
    rev = Volume(image=v.image[::-1].copy(), mask=v.mask[::-1].copy())
    z = 3
    zmax = 6
    fwd_s = stack_2dplus(v, z, 2)
    rev_s = stack_2dplus(rev, zmax - z, 2)
    assert np.array_equal(rev_s.input, fwd_s.input[::-1])


def test_synth_deterministic():
    a = synth_volume(seed=42, z=16, h=24, w=24, n_objects=2)
    b = synth_volume(seed=42, z=16, h=24, w=24, n_objects=2)
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.mask, b.mask)
    c = synth_volume(seed=43, z=16, h=24, w=24, n_objects=2)
    assert not np.array_equal(a.image, c.image)


def test_synth_mask_fraction_interior():
    v = synth_volume(seed=1, z=16, h=32, w=32, n_objects=1, noise=0.0)
    for z in range(1, 15):
        frac = v.mask[z].mean()
        assert 0.0 < frac < 1.0


def test_synth_adjacent_slices_correlated():
    # Pearson correlation of adjacent slices beats a shuffled pairing, averaged
    # over seeds: the drift is smooth in z.
    def corr(a, b):
        a = a.reshape(-1).astype(np.float64)
        b = b.reshape(-1).astype(np.float64)
        a -= a.mean()
        b -= b.mean()
        return float((a * b).sum() / np.sqrt((a * a).sum() * (b * b).sum()))

    adjacent, shuffled = [], []
    for seed in range(5):
        v = synth_volume(seed=seed, z=16, h=32, w=32, n_objects=2)
        rng = np.random.default_rng(seed)
        for z in range(8):
            nxt = v.image[z + 1]
            perm = rng.permutation(nxt.reshape(-1)).reshape(nxt.shape)
            adjacent.append(corr(v.image[z], nxt))
            shuffled.append(corr(v.image[z], perm))
    assert np.mean(adjacent) > np.mean(shuffled)


def test_synth_validates_extents():
    with pytest.raises(DataError):
        synth_volume(seed=0, z=8, h=32, w=32)
    with pytest.raises(DataError):
        synth_volume(seed=0, z=16, h=32, w=32, n_objects=0)


def test_split_sizes_and_partition():
    samples = list(range(10))
    train, val, test = dataset_split(samples, (0.8, 0.1, 0.1), seed=3)
    assert (len(train), len(val), len(test)) == (8, 1, 1)
    assert sorted(train + val + test) == samples


def test_split_deterministic():
    samples = list(range(23))
    a = dataset_split(samples, (0.6, 0.2, 0.2), seed=7)
    b = dataset_split(samples, (0.6, 0.2, 0.2), seed=7)
    assert a == b
    c = dataset_split(samples, (0.6, 0.2, 0.2), seed=8)
    assert a != c


def test_split_bad_inputs():
    with pytest.raises(DataError):
        dataset_split([], (0.8, 0.1, 0.1), 0)
    with pytest.raises(ConfigError):
        dataset_split([1, 2], (0.7, 0.2, 0.2), 0)


def test_sample_archive_round_trip(tmp_path):
    v = _toy_volume(z=5, h=8, w=8)
    samples = stack_all(v, 1)
    stems = save_samples(samples, tmp_path)
    assert stems == [f"z{s.center_index:04d}" for s in samples]
    back = load_samples(tmp_path)
    assert len(back) == len(samples)
    for a, b in zip(samples, back):
        assert np.array_equal(a.input, b.input)
        assert np.array_equal(a.center_mask, b.center_mask)
        assert a.center_index == b.center_index

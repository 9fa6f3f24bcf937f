"""Volume loading, 2D+ slice stacking, synthetic volumes and dataset splits.

A volume is a [Z,H,W] grayscale stack in [0,1] with an optional integer label
mask of the same shape. 2D+ samples stack ``2*half_window + 1`` adjacent
slices into the channels of one multi-channel input; the middle channel is
the slice whose mask is predicted. Edge slices are skipped, never padded:
padding would fabricate data and bias the very channel statistics this
toolkit audits.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .tensor import ntf_read, ntf_write


@dataclass
class Volume:
    image: np.ndarray  # [Z,H,W] float32 in [0,1]
    mask: np.ndarray | None = None  # [Z,H,W] uint8 class labels

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.image.shape


@dataclass
class Sample2DPlus:
    input: np.ndarray  # [N,H,W] float32, N odd
    center_mask: np.ndarray  # [H,W] uint8 binary
    center_index: int

    @property
    def n_channels(self) -> int:
        return self.input.shape[0]


# ---------------------------------------------------------------------------
# PGM (P5) slices


def read_pgm(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a binary PGM (P5) file, returning (values, maxval)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read PGM file {path}: {exc}") from exc
    if not blob.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (P5) file")
    # header = magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments run to end of line
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(blob):
            raise DataError(f"{path}: malformed PGM header")
        ch = blob[pos : pos + 1]
        if ch == b"#":
            nl = blob.find(b"\n", pos)
            pos = len(blob) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            m = re.match(rb"\d+", blob[pos:])
            if m is None:
                raise DataError(f"{path}: malformed PGM header")
            tokens.append(int(m.group()))
            pos += m.end()
    if pos >= len(blob) or not blob[pos : pos + 1].isspace():
        raise DataError(f"{path}: malformed PGM header")
    pos += 1  # single whitespace before payload
    width, height, maxval = tokens
    if maxval not in (255, 65535):
        raise DataError(f"{path}: PGM maxval must be 255 or 65535, got {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(blob) - pos < need:
        raise DataError(f"{path}: PGM payload truncated")
    arr = np.frombuffer(blob, dtype=dtype, count=width * height, offset=pos)
    return arr.reshape(height, width).astype(np.uint16 if maxval > 255 else np.uint8), maxval


def write_pgm(path: str | Path, values: np.ndarray, maxval: int = 255) -> None:
    """Write a 2-D array of nonnegative ints as binary PGM (P5)."""
    if maxval not in (255, 65535):
        raise DataError(f"PGM maxval must be 255 or 65535, got {maxval}")
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise DataError(f"PGM expects a 2-D array, got shape {arr.shape}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode()
    Path(path).write_bytes(header + arr.astype(dtype).tobytes())


# ---------------------------------------------------------------------------
# Volume loading


def _load_slices(paths: list[str | Path]) -> np.ndarray:
    slices = []
    maxvals = []
    for p in paths:
        arr, maxval = read_pgm(p)
        if slices and arr.shape != slices[0].shape:
            raise DataError(
                f"slice dimension mismatch: {p} is {arr.shape}, "
                f"expected {slices[0].shape}"
            )
        slices.append(arr)
        maxvals.append(maxval)
    if len(set(maxvals)) > 1:
        raise DataError("all PGM slices must share the same maxval")
    stack = np.stack(slices).astype(np.float32)
    return stack / np.float32(maxvals[0])


def load_volume(
    image_paths: list[str | Path] | str | Path,
    mask_paths: list[str | Path] | str | Path | None = None,
) -> Volume:
    """Load a volume from ordered PGM slices or from a single [Z,H,W] NTF file.

    PGM pixel values are divided by maxval; NTF image volumes are expected to
    be float32 already normalized to [0,1]. Masks hold integer class labels
    and are never normalized.
    """
    if isinstance(image_paths, (str, Path)):
        image = ntf_read(image_paths)
        if image.ndim != 3:
            raise DataError(f"{image_paths}: volume NTF must be [Z,H,W], got {image.shape}")
        image = image.astype(np.float32, copy=False)
        if image.min() < 0.0 or image.max() > 1.0:
            raise DataError(f"{image_paths}: image values must lie in [0,1]")
    else:
        if not image_paths:
            raise DataError("no image slices given")
        image = _load_slices(list(image_paths))

    mask = None
    if mask_paths is not None:
        if isinstance(mask_paths, (str, Path)):
            mask = ntf_read(mask_paths)
            if mask.ndim != 3:
                raise DataError(f"{mask_paths}: mask NTF must be [Z,H,W], got {mask.shape}")
            mask = mask.astype(np.uint8, copy=False)
        else:
            raw = []
            for p in mask_paths:
                arr, _ = read_pgm(p)
                raw.append(arr.astype(np.uint8))
            if not raw:
                raise DataError("no mask slices given")
            mask = np.stack(raw)
        if mask.shape != image.shape:
            raise DataError(
                f"mask/image shape mismatch: mask {mask.shape} vs image {image.shape}"
            )
    return Volume(image=image, mask=mask)


# ---------------------------------------------------------------------------
# 2D+ stacking


def stack_2dplus(
    v: Volume, z: int, half_window: int, class_of_interest: int = 1
) -> Sample2DPlus:
    """Stack slices [z-hw .. z+hw] into channels; the mask of slice z is the target.

    Edge slices (z closer than ``half_window`` to either end) are rejected.
    """
    if v.mask is None:
        raise DataError("volume has no mask; cannot build a labeled 2D+ sample")
    if half_window < 1:
        raise DataError(f"half_window must be >= 1, got {half_window}")
    zmax = v.image.shape[0] - 1
    if not half_window <= z <= zmax - half_window:
        raise DataError(
            f"slice {z} too close to the volume edge for half_window={half_window} "
            f"(valid interior range is [{half_window}, {zmax - half_window}])"
        )
    stack = v.image[z - half_window : z + half_window + 1].astype(np.float32, copy=True)
    center = (v.mask[z] == class_of_interest).astype(np.uint8)
    return Sample2DPlus(input=stack, center_mask=center, center_index=z)


def stack_all(v: Volume, half_window: int, class_of_interest: int = 1) -> list[Sample2DPlus]:
    """All interior-slice samples of a volume, in slice order."""
    zmax = v.image.shape[0] - 1
    return [
        stack_2dplus(v, z, half_window, class_of_interest)
        for z in range(half_window, zmax - half_window + 1)
    ]


# ---------------------------------------------------------------------------
# Synthetic volumes


def synth_volume(
    seed: int,
    z: int = 64,
    h: int = 64,
    w: int = 64,
    n_objects: int = 2,
    noise: float = 0.02,
) -> Volume:
    """Deterministic synthetic labeled volume: soft blobs drifting smoothly in z.

    Each object is a bright soft-edged blob whose center and radius wobble
    sinusoidally across slices, so adjacent slices are correlated like
    serial-section data. The mask marks blob support; noise is added to the
    image only.
    """
    if min(z, h, w) < 16:
        raise DataError(f"synthetic extents must all be >= 16, got {(z, h, w)}")
    if n_objects < 1:
        raise DataError(f"n_objects must be >= 1, got {n_objects}")
    rng = np.random.default_rng(seed)
    image = np.full((z, h, w), 0.15, dtype=np.float64)
    mask = np.zeros((z, h, w), dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    scale = float(min(h, w))
    for _ in range(n_objects):
        # radii sized so a couple of objects cover roughly a quarter of each
        # slice; much thinner foreground makes the BCE background basin sticky
        r0 = rng.uniform(0.14, 0.22) * scale
        amp = rng.uniform(0.04, 0.10) * scale
        lo = r0 + amp + 1.0
        cy0 = rng.uniform(lo, h - 1 - lo)
        cx0 = rng.uniform(lo, w - 1 - lo)
        cyc_y = rng.uniform(0.5, 1.5)
        cyc_x = rng.uniform(0.5, 1.5)
        ph_y, ph_x, ph_r = rng.uniform(0.0, 2.0 * np.pi, size=3)
        bright = rng.uniform(0.55, 0.75)
        for zi in range(z):
            t = zi / z
            cy = cy0 + amp * np.sin(2.0 * np.pi * cyc_y * t + ph_y)
            cx = cx0 + amp * np.sin(2.0 * np.pi * cyc_x * t + ph_x)
            r = r0 * (1.0 + 0.2 * np.sin(2.0 * np.pi * t + ph_r))
            d2 = (yy - cy) ** 2 + (xx - cx) ** 2
            sigma = r / 1.8
            image[zi] += bright * np.exp(-d2 / (2.0 * sigma * sigma))
            mask[zi][d2 <= r * r] = 1
    if noise > 0.0:
        image += rng.normal(0.0, noise, size=image.shape)
    return Volume(image=np.clip(image, 0.0, 1.0).astype(np.float32), mask=mask)


# ---------------------------------------------------------------------------
# Splits and sample archives


def dataset_split(
    samples: list, ratios: tuple[float, float, float], seed: int
) -> tuple[list, list, list]:
    """Deterministic seeded (train, val, test) partition.

    Val/test sizes are floored; the remainder goes to train.
    """
    if not samples:
        raise DataError("cannot split an empty sample list")
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"split ratios must be three positive values, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    m = len(samples)
    n_val = int(np.floor(ratios[1] * m))
    n_test = int(np.floor(ratios[2] * m))
    n_train = m - n_val - n_test
    order = np.random.default_rng(seed).permutation(m)
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train : n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val :]]
    return train, val, test


def save_samples(samples: list[Sample2DPlus], out_dir: str | Path) -> list[str]:
    """Persist samples as NTF pairs ``zNNNN.x.ntf`` / ``zNNNN.y.ntf``; returns stems."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stems = []
    for s in samples:
        stem = f"z{s.center_index:04d}"
        ntf_write(s.input, out / f"{stem}.x.ntf")
        ntf_write(s.center_mask, out / f"{stem}.y.ntf")
        stems.append(stem)
    return stems


def load_samples(in_dir: str | Path, stems: list[str] | None = None) -> list[Sample2DPlus]:
    """Load sample archives written by :func:`save_samples`."""
    base = Path(in_dir)
    if stems is None:
        stems = sorted(p.name[: -len(".x.ntf")] for p in base.glob("*.x.ntf"))
    if not stems:
        raise DataError(f"no samples found under {base}")
    out = []
    for stem in stems:
        x = ntf_read(base / f"{stem}.x.ntf").astype(np.float32, copy=False)
        y = ntf_read(base / f"{stem}.y.ntf").astype(np.uint8, copy=False)
        m = re.fullmatch(r"z(\d+)", stem)
        if m is None:
            raise DataError(f"bad sample stem {stem!r} (expected zNNNN)")
        out.append(Sample2DPlus(input=x, center_mask=y, center_index=int(m.group(1))))
    return out


def save_split_lists(
    path: str | Path, train: list[Sample2DPlus], val: list[Sample2DPlus], test: list[Sample2DPlus]
) -> None:
    payload = {
        part: [f"z{s.center_index:04d}" for s in group]
        for part, group in (("train", train), ("val", val), ("test", test))
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_split_lists(path: str | Path) -> dict[str, list[str]]:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read split file {path}: {exc}") from exc
    for part in ("train", "val", "test"):
        if part not in payload:
            raise DataError(f"split file {path} is missing the {part!r} list")
    return payload

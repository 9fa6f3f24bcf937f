"""First-layer channel weight surgery: uniform-channel, average, pretrained loads.

Channel naming follows the usual RGB convention for 3-channel stacks:
index 0 = "red" (first slice), 1 = "green" (middle), 2 = "blue" (last).
Surgery touches only the first convolution; no variance rescaling is applied
afterwards (reports note this).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .interp import bilinear_resize
from .net import Model, build_model, load_checkpoint
from .tensor import ntf_read

CHANNEL_NAMES = {"red": 0, "r": 0, "green": 1, "g": 1, "blue": 2, "b": 2}
STRATEGY_KINDS = ("random", "pretrained", "uniform", "average")
ADAPT_POLICIES = ("center_crop", "bilinear")


def parse_channel(text: str | int) -> int:
    """Channel index from a number or an RGB color name (3-channel convention)."""
    if isinstance(text, int):
        return text
    key = text.strip().lower()
    if key in CHANNEL_NAMES:
        return CHANNEL_NAMES[key]
    try:
        return int(key)
    except ValueError:
        raise ConfigError(
            f"bad channel {text!r}: use an index or one of red/green/blue"
        ) from None


@dataclass(frozen=True)
class InitStrategy:
    kind: str  # random | pretrained | uniform | average
    source: str | None = None  # checkpoint dir or first-conv kernel NTF
    channel: int | None = None  # for uniform
    adapt: str = "center_crop"

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown init strategy {self.kind!r}; choose from {STRATEGY_KINDS}")
        if self.adapt not in ADAPT_POLICIES:
            raise ConfigError(f"unknown adapt policy {self.adapt!r}; choose from {ADAPT_POLICIES}")
        if self.kind == "uniform" and self.channel is None:
            raise ConfigError("uniform strategy needs a channel")
        if self.kind == "pretrained" and not self.source:
            raise ConfigError("pretrained strategy needs a source path")


def uniformize_channel(kernel: np.ndarray, c: int) -> np.ndarray:
    """Copy channel slice ``c`` of an [out,N,k,k] kernel into every channel slice."""
    kernel = np.asarray(kernel)
    if kernel.ndim != 4:
        raise DataError(f"kernel must be [out,N,k,k], got shape {kernel.shape}")
    n = kernel.shape[1]
    if not 0 <= c < n:
        raise DataError(f"channel {c} out of range for {n} channel slices")
    return np.repeat(kernel[:, c : c + 1], n, axis=1)


def average_channels(kernel: np.ndarray) -> np.ndarray:
    """Replace every channel slice with the mean over the N original slices.

    The mean reduces in sorted value order so the result is bit-exactly
    invariant under input-channel permutations.
    """
    kernel = np.asarray(kernel)
    if kernel.ndim != 4:
        raise DataError(f"kernel must be [out,N,k,k], got shape {kernel.shape}")
    n = kernel.shape[1]
    mean = np.sort(kernel.astype(np.float64), axis=1).sum(axis=1, keepdims=True) / n
    return np.repeat(mean.astype(kernel.dtype), n, axis=1)


def adapt_kernel(
    src: np.ndarray, dst_shape: tuple[int, int, int, int], policy: str = "center_crop"
) -> np.ndarray:
    """Fit a source first-conv kernel to a destination shape.

    Filters: the first ``out`` of the source. Channels must already match
    (collapse with uniformize/average first). Spatial size is center-cropped
    or bilinearly resampled per ``policy``.
    """
    src = np.asarray(src)
    if src.ndim != 4:
        raise DataError(f"source kernel must be [out,N,k,k], got shape {src.shape}")
    out, n, k, k2 = dst_shape
    out_s, n_s, ks, ks2 = src.shape
    if k != k2 or ks != ks2:
        raise DataError("only square kernels are supported")
    if out > out_s:
        raise DataError(f"destination needs {out} filters but source has only {out_s}")
    if n_s != n:
        raise DataError(
            f"source has {n_s} channel slices, destination {n}; "
            "collapse channels (uniform/average) before adapting"
        )
    filters = src[:out]
    if ks == k:
        spatial = filters
    elif policy == "center_crop":
        if ks < k:
            raise DataError(f"center_crop cannot grow a {ks}x{ks} kernel to {k}x{k}")
        off = (ks - k) // 2
        spatial = filters[:, :, off : off + k, off : off + k]
    elif policy == "bilinear":
        spatial = bilinear_resize(filters, (k, k))
    else:
        raise ConfigError(f"unknown adapt policy {policy!r}")
    return np.ascontiguousarray(spatial, dtype=np.float32)


def _first_conv_kernel_from(source: str | Path) -> np.ndarray:
    """First-conv kernel from either a checkpoint directory or a bare NTF file."""
    p = Path(source)
    if p.is_dir():
        src_model = load_checkpoint(p)
        return src_model.params[f"{src_model.first_conv}.weight"]
    kernel = ntf_read(p).astype(np.float32, copy=False)
    if kernel.ndim != 4:
        raise DataError(f"{p}: first-conv kernel NTF must be [out,N,k,k], got {kernel.shape}")
    return kernel


def apply_strategy(m: Model, s: InitStrategy, seed: int) -> Model:
    """New model initialized per strategy; the input model only provides the shape."""
    cfg = replace(m.cfg, seed=seed)
    if s.kind == "pretrained" and Path(s.source).is_dir():
        # full checkpoint: covers domain-pretraining with a previous run
        return load_checkpoint(s.source)

    base = build_model(cfg)
    dst_shape = base.params[f"{base.first_conv}.weight"].shape

    if s.kind == "random":
        return base

    if s.source:
        kernel = _first_conv_kernel_from(s.source)
    else:
        kernel = base.params[f"{base.first_conv}.weight"]

    if s.kind == "uniform":
        kernel = uniformize_channel(kernel, s.channel)
    elif s.kind == "average":
        kernel = average_channels(kernel)
    base.params[f"{base.first_conv}.weight"] = adapt_kernel(kernel, dst_shape, s.adapt)
    return base


def apply_to_checkpoint(model: Model, s: InitStrategy) -> Model:
    """Surgery on an existing trained model: rewrite only its first conv in place.

    Unlike :func:`apply_strategy` (which builds a fresh init), this keeps all
    trained parameters and only uniformizes/averages/replaces the first-conv
    kernel, the post-training mitigation path.
    """
    out = model.copy()
    name = f"{out.first_conv}.weight"
    dst_shape = out.params[name].shape
    if s.kind == "random":
        out.params[name] = build_model(out.cfg).params[name]
        return out
    kernel = _first_conv_kernel_from(s.source) if s.source else out.params[name]
    if s.kind == "uniform":
        kernel = uniformize_channel(kernel, s.channel)
    elif s.kind == "average":
        kernel = average_channels(kernel)
    out.params[name] = adapt_kernel(kernel, dst_shape, s.adapt)
    return out

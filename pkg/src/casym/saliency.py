"""Per-channel saliency maps for a frozen model: gradient, occlusion and CAM methods.

Six methods are implemented. Intensities are absolute gradient magnitudes
(signed attention would let positive and negative contributions cancel in
the pooled distributions), and the aggregated "prediction" is always the
sigmoid probability, matching the 0.85 confidence-threshold convention used
for foreground masking.

The channel-occluded GradCAM++ hybrid is unstable by construction (a whole
input channel collapsed to its mean produces unnatural gradients); it is
kept behind an explicit opt-in in the CLI and its outputs carry an
``unstable`` marker.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .interp import bilinear_resize
from .net import Model, activations_and_grads, grad_wrt_input, sigmoid
from .tensor import channel_mean, ntf_read, ntf_write

METHODS = (
    "foreground",
    "full_output",
    "foreground100",
    "full_output100",
    "occlusion",
    "gradcampp_channel",
)

DEFAULT_THRESHOLD = 0.85  # confidence threshold for the binary prediction mask


@dataclass
class SaliencyMap:
    values: np.ndarray  # [N,H,W] float32, nonnegative
    method: str
    meta: dict = field(default_factory=dict)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def flags(self) -> list[str]:
        return self.meta.get("flags", [])


@dataclass
class PredictionMask:
    probs: np.ndarray  # [1,H,W] in [0,1]
    binary: np.ndarray  # [1,H,W] uint8, probs >= threshold
    threshold: float


def prediction_mask(model: Model, x: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> PredictionMask:
    z, _ = model._forward(x[None].astype(np.float32, copy=False))
    probs = sigmoid(z[0])
    return PredictionMask(probs=probs, binary=(probs >= threshold).astype(np.uint8), threshold=threshold)


def _finalize(values: np.ndarray, method: str, meta: dict) -> SaliencyMap:
    values = np.ascontiguousarray(values, dtype=np.float32)
    if not np.isfinite(values).all():
        raise DataError(f"{method} saliency produced non-finite values")
    return SaliencyMap(values=values, method=method, meta=meta)


# ---------------------------------------------------------------------------
# Gradient-aggregation methods


def saliency_full_output(model: Model, x: np.ndarray, sample_id: str = "") -> SaliencyMap:
    """|d sum(sigmoid(logits)) / dx|: every output pixel weighted equally."""
    ones = np.ones((1,) + x.shape[1:], dtype=np.float32)
    g = grad_wrt_input(model, x, ones)
    return _finalize(np.abs(g), "full_output", {"sample_id": sample_id, "flags": []})


def saliency_foreground(
    model: Model, x: np.ndarray, threshold: float = DEFAULT_THRESHOLD, sample_id: str = ""
) -> SaliencyMap:
    """Gradient of the prediction sum weighted by the binary prediction mask."""
    pm = prediction_mask(model, x, threshold)
    flags = [] if pm.binary.any() else ["empty_foreground"]
    g = grad_wrt_input(model, x, pm.binary.astype(np.float32))
    meta = {"sample_id": sample_id, "threshold": threshold, "flags": flags}
    return _finalize(np.abs(g), "foreground", meta)


def saliency_sampled(
    model: Model,
    x: np.ndarray,
    k: int = 100,
    mode: str = "full",
    seed: int = 0,
    threshold: float = DEFAULT_THRESHOLD,
    sample_id: str = "",
) -> SaliencyMap:
    """Gradient aggregated over k output pixels sampled without replacement.

    ``mode='full'`` draws from all pixels, ``mode='foreground'`` from the
    binary prediction mask (which must be nonempty).
    """
    if mode not in ("full", "foreground"):
        raise ConfigError(f"sampled saliency mode must be full|foreground, got {mode!r}")
    if k < 1:
        raise ConfigError(f"sample count must be >= 1, got {k}")
    h, w = x.shape[1:]
    flags = []
    meta: dict = {"sample_id": sample_id, "k": k, "mode": mode, "seed": seed}
    if mode == "foreground":
        pm = prediction_mask(model, x, threshold)
        eligible = np.flatnonzero(pm.binary.reshape(-1))
        meta["threshold"] = threshold
        if eligible.size == 0:
            raise DataError(
                "sampled foreground saliency needs at least one foreground pixel"
            )
    else:
        eligible = np.arange(h * w)
    if eligible.size <= k:
        chosen = eligible
        if eligible.size < k:
            flags.append("undersampled")
    else:
        chosen = np.random.default_rng(seed).choice(eligible, size=k, replace=False)
    weights = np.zeros(h * w, dtype=np.float32)
    weights[chosen] = 1.0
    g = grad_wrt_input(model, x, weights.reshape(1, h, w))
    meta["flags"] = flags
    name = "full_output100" if mode == "full" else "foreground100"
    return _finalize(np.abs(g), name, meta)


# ---------------------------------------------------------------------------
# Occlusion


def saliency_occlusion(
    model: Model, x: np.ndarray, patch: int = 16, fill: str = "channel_mean", sample_id: str = ""
) -> SaliencyMap:
    """Classical occlusion at reduced resolution, per channel and patch.

    Each patch of each channel is replaced by that channel's arithmetic mean;
    the score is the L1 change of the sigmoid prediction over all output
    pixels, written into every pixel of the occluded patch.
    """
    if fill != "channel_mean":
        raise ConfigError(f"unsupported occlusion fill {fill!r}")
    n, h, w = x.shape
    if h % patch or w % patch:
        raise DataError(f"spatial extents {h}x{w} not divisible by patch {patch}")
    x = x.astype(np.float32, copy=False)
    z0, _ = model._forward(x[None])
    p0 = sigmoid(z0).astype(np.float64)
    ny, nx = h // patch, w // patch
    values = np.zeros_like(x)
    for c in range(n):
        mean_c = np.float32(channel_mean(x, c))
        batch = np.repeat(x[None], ny * nx, axis=0)
        for j in range(ny):
            for i in range(nx):
                batch[j * nx + i, c, j * patch : (j + 1) * patch, i * patch : (i + 1) * patch] = mean_c
        zo, _ = model._forward(batch)
        po = sigmoid(zo).astype(np.float64)
        scores = np.abs(po - p0).sum(axis=(1, 2, 3))
        for j in range(ny):
            for i in range(nx):
                values[c, j * patch : (j + 1) * patch, i * patch : (i + 1) * patch] = scores[j * nx + i]
    meta = {"sample_id": sample_id, "patch": patch, "fill": fill, "flags": []}
    return _finalize(values, "occlusion", meta)


# ---------------------------------------------------------------------------
# GradCAM / GradCAM++


def _cam_combine(a: np.ndarray, da: np.ndarray, plus: bool) -> np.ndarray:
    """Filter-weighted activation map [h,w] from activations and their gradients."""
    a64 = a.astype(np.float64)
    da64 = da.astype(np.float64)
    if plus:
        da2 = da64 * da64
        denom = 2.0 * da2 + a64.sum(axis=(1, 2), keepdims=True) * da2 * da64
        alpha = np.divide(da2, denom, out=np.zeros_like(da2), where=denom != 0.0)
        wk = (alpha * np.maximum(da64, 0.0)).sum(axis=(1, 2))
    else:
        wk = da64.mean(axis=(1, 2))
    return np.maximum((wk[:, None, None] * a64).sum(axis=0), 0.0)


def _cam_map(
    model: Model, x: np.ndarray, layer: str, output_weights: np.ndarray, plus: bool
) -> tuple[np.ndarray, list[str]]:
    a, da = activations_and_grads(model, x, layer, output_weights)
    raw = _cam_combine(a, da, plus)
    up = bilinear_resize(raw, x.shape[1:])
    peak = up.max()
    flags = []
    if peak > 0:
        up = up / peak
    else:
        flags.append("zero_map")
    return up[None].astype(np.float32), flags


def gradcampp(model: Model, x: np.ndarray, layer: str, output_weights: np.ndarray) -> np.ndarray:
    """GradCAM++ map [1,H,W], bilinearly upsampled and max-normalized to [0,1]."""
    return _cam_map(model, x, layer, output_weights, plus=True)[0]


def gradcam(model: Model, x: np.ndarray, layer: str, output_weights: np.ndarray) -> np.ndarray:
    """First-order GradCAM (spatial-mean filter weights), same output contract."""
    return _cam_map(model, x, layer, output_weights, plus=False)[0]


def gradcampp_channel_occluded(
    model: Model, x: np.ndarray, layer: str, mode: str = "diff", sample_id: str = ""
) -> SaliencyMap:
    """Channel attention from full-channel occlusion of GradCAM++ maps.

    Channel plane c is |base - occluded| where the occluded map comes from
    ``x`` with channel c replaced entirely by its arithmetic mean
    (``mode='diff'``, the default) or the occluded map itself
    (``mode='occluded'``).
    """
    if mode not in ("diff", "occluded"):
        raise ConfigError(f"channel CAM mode must be diff|occluded, got {mode!r}")
    n, h, w = x.shape
    ones = np.ones((1, h, w), dtype=np.float32)
    flags: list[str] = []
    base, f0 = _cam_map(model, x, layer, ones, plus=True)
    flags += [f"base_{f}" for f in f0]
    planes = np.zeros_like(x, dtype=np.float32)
    for c in range(n):
        xo = x.astype(np.float32, copy=True)
        xo[c] = np.float32(channel_mean(x, c))
        occ, fc = _cam_map(model, xo, layer, ones, plus=True)
        flags += [f"ch{c}_{f}" for f in fc]
        planes[c] = np.abs(base[0] - occ[0]) if mode == "diff" else occ[0]
    meta = {
        "sample_id": sample_id,
        "layer": layer,
        "mode": mode,
        "unstable": True,
        "flags": flags,
    }
    return _finalize(planes, "gradcampp_channel", meta)


# ---------------------------------------------------------------------------
# Dispatch and persistence


def compute_saliency(
    model: Model,
    x: np.ndarray,
    method: str,
    *,
    threshold: float = DEFAULT_THRESHOLD,
    k: int = 100,
    seed: int = 0,
    patch: int = 16,
    layer: str | None = None,
    channel_mode: str = "diff",
    sample_id: str = "",
) -> SaliencyMap:
    """Uniform entry point used by the CLI; parameters unused by a method are ignored."""
    if method == "foreground":
        return saliency_foreground(model, x, threshold, sample_id)
    if method == "full_output":
        return saliency_full_output(model, x, sample_id)
    if method == "foreground100":
        return saliency_sampled(model, x, k, "foreground", seed, threshold, sample_id)
    if method == "full_output100":
        return saliency_sampled(model, x, k, "full", seed, threshold, sample_id)
    if method == "occlusion":
        return saliency_occlusion(model, x, patch, sample_id=sample_id)
    if method == "gradcampp_channel":
        if layer is None:
            layer = "bridge.b"
        return gradcampp_channel_occluded(model, x, layer, channel_mode, sample_id)
    raise ConfigError(f"unknown saliency method {method!r}; choose from {METHODS}")


def save_saliency(sal: SaliencyMap, path: str | Path) -> None:
    """Persist map values as NTF plus a JSON sidecar with method and parameters."""
    path = Path(path)
    ntf_write(sal.values, path)
    sidecar = {"method": sal.method, "shape": list(sal.values.shape), **sal.meta}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_saliency(path: str | Path) -> SaliencyMap:
    path = Path(path)
    values = ntf_read(path).astype(np.float32, copy=False)
    try:
        sidecar = json.loads(path.with_suffix(".json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read saliency sidecar for {path}: {exc}") from exc
    method = sidecar.pop("method", "")
    sidecar.pop("shape", None)
    return SaliencyMap(values=values, method=method, meta=sidecar)

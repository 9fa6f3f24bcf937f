"""Small bilinear resampling helper shared by kernel adaptation and CAM upsampling."""

from __future__ import annotations

import numpy as np


def bilinear_resize(a: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Resize the trailing two dims of ``a`` to ``out_hw`` (align-corners sampling).

    Uses the lerp form ``a + t*(b - a)`` so constant inputs are reproduced
    exactly. Leading dims are broadcast through unchanged.
    """
    h2, w2 = out_hw
    h, w = a.shape[-2:]
    if (h2, w2) == (h, w):
        return a.copy()
    src = a.astype(np.float64, copy=False)
    ys = np.linspace(0.0, h - 1.0, h2) if h2 > 1 else np.array([(h - 1) / 2.0])
    xs = np.linspace(0.0, w - 1.0, w2) if w2 > 1 else np.array([(w - 1) / 2.0])
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 1)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    a00 = src[..., y0[:, None], x0[None, :]]
    a01 = src[..., y0[:, None], x1[None, :]]
    a10 = src[..., y1[:, None], x0[None, :]]
    a11 = src[..., y1[:, None], x1[None, :]]
    top = a00 + tx * (a01 - a00)
    bot = a10 + tx * (a11 - a10)
    out = top + ty * (bot - top)
    return out.astype(a.dtype, copy=False)

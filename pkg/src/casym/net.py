"""Minimal encoder-decoder segmentation net with hand-rolled reverse-mode gradients.

The architecture is a small U-Net: two 3x3 convs + ReLU per level, 2x2 max
pooling down, nearest upsampling with skip concatenation up, and a 1x1 head
producing one logit channel at input resolution. Forward math runs in
float32; loss and metric accumulation in float64.

The first convolution reduces over input channels in *sorted value order*
(per output position), which makes the forward pass bit-exactly invariant
under any permutation applied jointly to the input channels and the first
conv's kernel slices. Plain left-to-right accumulation would break that
exactness through float non-associativity; every symmetry check in the
toolkit leans on this.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, DivergenceError
from .tensor import ntf_read, ntf_write


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    widths: tuple[int, ...] = (8, 16)
    kernel: int = 3
    levels: int = 2
    seed: int = 0


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    weight_decay: float = 1e-4
    steps: int = 500
    batch: int = 4
    seed: int = 0
    flip_augment: bool = True
    eval_every: int = 50


@dataclass
class TrainHistory:
    loss: list[tuple[int, float]] = field(default_factory=list)
    val_dice: list[tuple[int, float]] = field(default_factory=list)


def _validate_config(cfg: ModelConfig) -> None:
    if cfg.in_channels < 1 or cfg.in_channels % 2 == 0:
        raise DataError(f"in_channels must be odd and >= 1, got {cfg.in_channels}")
    if not cfg.widths or any(w < 1 for w in cfg.widths):
        raise DataError(f"widths must be non-empty positive counts, got {cfg.widths}")
    if cfg.kernel < 1 or cfg.kernel % 2 == 0:
        raise DataError(f"kernel must be odd and >= 1, got {cfg.kernel}")
    if cfg.levels < 1 or cfg.levels != len(cfg.widths):
        raise DataError(
            f"levels must equal len(widths) (one width per pooling level), "
            f"got levels={cfg.levels} widths={cfg.widths}"
        )


def _conv_plan(cfg: ModelConfig) -> list[tuple[str, int, int, int]]:
    """Ordered conv layers as (name, in_channels, out_channels, kernel)."""
    plan = []
    prev = cfg.in_channels
    for i, width in enumerate(cfg.widths):
        plan.append((f"enc{i}.a", prev, width, cfg.kernel))
        plan.append((f"enc{i}.b", width, width, cfg.kernel))
        prev = width
    plan.append(("bridge.a", prev, prev, cfg.kernel))
    plan.append(("bridge.b", prev, prev, cfg.kernel))
    for i in reversed(range(cfg.levels)):
        skip = cfg.widths[i]
        plan.append((f"dec{i}.a", prev + skip, skip, cfg.kernel))
        plan.append((f"dec{i}.b", skip, skip, cfg.kernel))
        prev = skip
    plan.append(("head", prev, 1, 1))
    return plan


# ---------------------------------------------------------------------------
# Functional pieces


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """[B,C,H,W] -> [B, C*k*k, H*W] patch matrix for 'same' zero padding."""
    b, c, h, w = x.shape
    pad = k // 2
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # [B,C,H,W,k,k]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * k * k, h * w)


def _conv_forward(
    x: np.ndarray, w: np.ndarray, b: np.ndarray | None, canonical: bool = False
) -> np.ndarray:
    bsz, cin, h, ww = x.shape
    cout, _, k, _ = w.shape
    if canonical:
        # per-input-channel partial sums, reduced in sorted order so the
        # result depends only on the multiset of channel contributions
        parts = np.empty((cin, bsz, cout, h * ww), dtype=x.dtype)
        for c in range(cin):
            cols = _im2col(x[:, c : c + 1], k)
            parts[c] = np.matmul(w[:, c].reshape(cout, k * k), cols)
        parts.sort(axis=0)
        y = parts.sum(axis=0)
    else:
        y = np.matmul(w.reshape(cout, -1), _im2col(x, k))
    y = y.reshape(bsz, cout, h, ww)
    if b is not None:
        y += b[None, :, None, None]
    return y


def _conv_input_grad(dy: np.ndarray, w: np.ndarray) -> np.ndarray:
    # transposed conv: correlate dy with spatially flipped kernels, swapped in/out
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return _conv_forward(dy, wt, None)


def _conv_param_grads(dy: np.ndarray, x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    bsz, cout, h, w = dy.shape
    cols = _im2col(x, k)  # [B, CKK, HW]
    dym = dy.reshape(bsz, cout, h * w)
    dw = np.matmul(dym, cols.transpose(0, 2, 1)).sum(axis=0)
    return dw.reshape(cout, x.shape[1], k, k), dy.sum(axis=(0, 2, 3))


def _maxpool2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b, c, h, w = x.shape
    r = np.ascontiguousarray(
        x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    ).reshape(b, c, h // 2, w // 2, 4)
    idx = r.argmax(axis=-1)
    y = np.take_along_axis(r, idx[..., None], axis=-1)[..., 0]
    return y, idx


def _maxpool2_grad(dy: np.ndarray, idx: np.ndarray) -> np.ndarray:
    b, c, h2, w2 = dy.shape
    dr = np.zeros((b, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(dr, idx[..., None], dy[..., None], axis=-1)
    return np.ascontiguousarray(
        dr.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    ).reshape(b, c, h2 * 2, w2 * 2)


def _upsample2(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=2).repeat(2, axis=3)


def _upsample2_grad(dy: np.ndarray) -> np.ndarray:
    b, c, h, w = dy.shape
    return dy.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(logits: np.ndarray, target: np.ndarray) -> float:
    """Mean binary cross-entropy from logits, accumulated in float64."""
    if logits.shape != target.shape:
        raise DataError(f"logits shape {logits.shape} != target shape {target.shape}")
    z = logits.astype(np.float64, copy=False)
    t = target.astype(np.float64, copy=False)
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    return float(per.mean())


# ---------------------------------------------------------------------------
# Model


class Model:
    """Parameter container plus explicit forward/backward over the fixed wiring."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params
        self.plan = _conv_plan(cfg)

    def layer_names(self) -> list[str]:
        return [name for name, *_ in self.plan]

    @property
    def first_conv(self) -> str:
        return self.plan[0][0]

    def copy(self) -> "Model":
        return Model(self.cfg, {k: v.copy() for k, v in self.params.items()})

    # -- forward ------------------------------------------------------------

    def _conv_relu(self, name: str, a: np.ndarray, cache: dict) -> np.ndarray:
        cache["x"][name] = a
        z = _conv_forward(
            a,
            self.params[f"{name}.weight"],
            self.params[f"{name}.bias"],
            canonical=(name == self.first_conv),
        )
        cache["z"][name] = z
        out = np.maximum(z, 0.0)
        bump = cache.get("bump")
        if bump is not None and bump[0] == name:
            out = out.copy()
            out[(0,) + tuple(bump[1])] += bump[2]
        return out

    def _forward(self, xb: np.ndarray, bump=None) -> tuple[np.ndarray, dict]:
        # bump=(layer, index, eps) nudges one post-ReLU activation entry; only
        # the finite-difference tests of activation gradients use it
        cache: dict = {"x": {}, "z": {}, "pool": [], "skip_ch": [], "bump": bump}
        a = xb
        skips = []
        for i in range(self.cfg.levels):
            a = self._conv_relu(f"enc{i}.a", a, cache)
            a = self._conv_relu(f"enc{i}.b", a, cache)
            skips.append(a)
            a, idx = _maxpool2(a)
            cache["pool"].append(idx)
        a = self._conv_relu("bridge.a", a, cache)
        a = self._conv_relu("bridge.b", a, cache)
        for i in reversed(range(self.cfg.levels)):
            up = _upsample2(a)
            cache["skip_ch"].append(up.shape[1])
            a = np.concatenate([up, skips[i]], axis=1)
            a = self._conv_relu(f"dec{i}.a", a, cache)
            a = self._conv_relu(f"dec{i}.b", a, cache)
        cache["x"]["head"] = a
        z = _conv_forward(a, self.params["head.weight"], self.params["head.bias"])
        cache["z"]["head"] = z
        return z, cache

    # -- backward -----------------------------------------------------------

    def _conv_relu_back(
        self, name: str, d: np.ndarray, cache: dict, res: dict, capture: str | None
    ) -> np.ndarray:
        if capture == name:
            z = cache["z"][name]
            res["capture"] = (np.maximum(z, 0.0), d.copy())
        dz = d * (cache["z"][name] > 0)
        if res["grads"] is not None:
            k = self.params[f"{name}.weight"].shape[-1]
            dw, db = _conv_param_grads(dz, cache["x"][name], k)
            res["grads"][f"{name}.weight"] = dw
            res["grads"][f"{name}.bias"] = db
        return _conv_input_grad(dz, self.params[f"{name}.weight"])

    def _backward(
        self,
        dz_logits: np.ndarray,
        cache: dict,
        need_param_grads: bool = True,
        capture: str | None = None,
    ) -> dict:
        res: dict = {"grads": {} if need_param_grads else None, "capture": None}
        if capture == "head":
            res["capture"] = (cache["z"]["head"].copy(), dz_logits.copy())
        if need_param_grads:
            dw, db = _conv_param_grads(dz_logits, cache["x"]["head"], 1)
            res["grads"]["head.weight"] = dw
            res["grads"]["head.bias"] = db
        d = _conv_input_grad(dz_logits, self.params["head.weight"])
        d_skips: dict[int, np.ndarray] = {}
        # decoder blocks, most recent first (forward built them for i = L-1 .. 0)
        for i in range(self.cfg.levels):
            d = self._conv_relu_back(f"dec{i}.b", d, cache, res, capture)
            d = self._conv_relu_back(f"dec{i}.a", d, cache, res, capture)
            nup = cache["skip_ch"][self.cfg.levels - 1 - i]
            d_skips[i] = d[:, nup:]
            d = _upsample2_grad(np.ascontiguousarray(d[:, :nup]))
        d = self._conv_relu_back("bridge.b", d, cache, res, capture)
        d = self._conv_relu_back("bridge.a", d, cache, res, capture)
        for i in reversed(range(self.cfg.levels)):
            d = _maxpool2_grad(d, cache["pool"][i])
            d = d + d_skips[i]
            d = self._conv_relu_back(f"enc{i}.b", d, cache, res, capture)
            d = self._conv_relu_back(f"enc{i}.a", d, cache, res, capture)
        res["dx"] = d
        return res


def build_model(cfg: ModelConfig) -> Model:
    """Fresh model with seeded He (fan-in) initialization, biases zero."""
    _validate_config(cfg)
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, np.ndarray] = {}
    for name, cin, cout, k in _conv_plan(cfg):
        std = np.sqrt(2.0 / (cin * k * k))
        params[f"{name}.weight"] = (rng.standard_normal((cout, cin, k, k)) * std).astype(
            np.float32
        )
        params[f"{name}.bias"] = np.zeros(cout, dtype=np.float32)
    return Model(cfg, params)


def _check_input(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != model.cfg.in_channels:
        raise DataError(
            f"input must be [{model.cfg.in_channels},H,W], got shape {x.shape}"
        )
    div = 2 ** model.cfg.levels
    if x.shape[1] % div or x.shape[2] % div:
        raise DataError(
            f"spatial extents must be divisible by {div} (levels={model.cfg.levels}), "
            f"got {x.shape[1]}x{x.shape[2]}"
        )
    return x.astype(np.float32, copy=False)


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Logits [1,H,W] for a single [N,H,W] sample."""
    x = _check_input(model, x)
    z, _ = model._forward(x[None])
    if not np.isfinite(z).all():
        raise DivergenceError("forward pass produced non-finite logits")
    return z[0]


def predict_probs(model: Model, x: np.ndarray) -> np.ndarray:
    """Sigmoid probabilities [1,H,W]."""
    return sigmoid(forward(model, x))


def grad_wrt_input(model: Model, x: np.ndarray, output_weights: np.ndarray) -> np.ndarray:
    """Gradient of sum(output_weights * sigmoid(logits)) w.r.t. every input pixel."""
    x = _check_input(model, x)
    z, cache = model._forward(x[None])
    if output_weights.shape != z[0].shape:
        raise DataError(
            f"output_weights shape {output_weights.shape} != logits shape {z[0].shape}"
        )
    p = sigmoid(z)
    dz = (output_weights[None].astype(np.float32, copy=False) * p * (1.0 - p)).astype(
        np.float32, copy=False
    )
    res = model._backward(dz, cache, need_param_grads=False)
    return res["dx"][0]


def activations_and_grads(
    model: Model, x: np.ndarray, layer_name: str, output_weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Rectified activations A at a named conv and dA of the weighted prediction sum.

    For the 1x1 ``head`` layer A is the raw logit map. Everywhere else A is
    the post-ReLU feature map, the tensor CAM methods operate on.
    """
    if layer_name not in model.layer_names():
        raise DataError(
            f"unknown layer {layer_name!r}; conv layers are {model.layer_names()}"
        )
    x = _check_input(model, x)
    z, cache = model._forward(x[None])
    if output_weights.shape != z[0].shape:
        raise DataError(
            f"output_weights shape {output_weights.shape} != logits shape {z[0].shape}"
        )
    p = sigmoid(z)
    dz = (output_weights[None].astype(np.float32, copy=False) * p * (1.0 - p)).astype(
        np.float32, copy=False
    )
    res = model._backward(dz, cache, need_param_grads=False, capture=layer_name)
    a, da = res["capture"]
    return a[0], da[0]


# ---------------------------------------------------------------------------
# Training


def _mean_val_dice(model: Model, val_samples: list) -> float:
    from .quality import confusion, dice  # local import: quality is a leaf module

    scores = []
    for s in val_samples:
        probs = sigmoid(model._forward(s.input[None].astype(np.float32))[0])[0]
        scores.append(dice(confusion(probs, s.center_mask[None], threshold=0.5)))
    return float(np.mean(scores)) if scores else float("nan")


def train(
    model: Model, train_samples: list, val_samples: list, tc: TrainConfig
) -> tuple[Model, TrainHistory]:
    """Plain SGD with weight decay: p <- p - lr*(dL/dp + wd*p). Updates in place."""
    if not train_samples:
        raise DataError("training set is empty")
    if tc.lr < 0 or tc.weight_decay < 0 or tc.steps < 1 or tc.batch < 1:
        raise DataError(f"bad train config: {tc}")
    xs = np.stack([_check_input(model, s.input) for s in train_samples])
    ys = np.stack([s.center_mask for s in train_samples]).astype(np.float32)
    rng = np.random.default_rng(tc.seed)
    history = TrainHistory()
    m = len(train_samples)
    for step in range(1, tc.steps + 1):
        take = rng.choice(m, size=min(tc.batch, m), replace=False)
        xb = xs[take].copy()
        yb = ys[take].copy()
        if tc.flip_augment:
            flips = rng.integers(0, 2, size=(len(take), 2))
            for j in range(len(take)):
                if flips[j, 0]:  # horizontal: all channels and mask together
                    xb[j] = xb[j][:, :, ::-1].copy()
                    yb[j] = yb[j][:, ::-1].copy()
                if flips[j, 1]:
                    xb[j] = xb[j][:, ::-1, :].copy()
                    yb[j] = yb[j][::-1, :].copy()
        z, cache = model._forward(xb)
        loss = bce_with_logits(z, yb[:, None])
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}")
        scale = np.float32(1.0 / z.size)
        dz = (sigmoid(z) - yb[:, None]) * scale
        res = model._backward(dz, cache, need_param_grads=True)
        lr = np.float32(tc.lr)
        wd = np.float32(tc.weight_decay)
        for name, g in res["grads"].items():
            p = model.params[name]
            p -= lr * (g + wd * p)
        history.loss.append((step, loss))
        if val_samples and (step % tc.eval_every == 0 or step == tc.steps):
            history.val_dice.append((step, _mean_val_dice(model, val_samples)))
    return model, history


# ---------------------------------------------------------------------------
# Checkpoints: one NTF per parameter plus a plain-text manifest


_MANIFEST_HEAD = "casym-checkpoint v1"


def save_checkpoint(model: Model, out_dir: str | Path, force: bool = False) -> None:
    out = Path(out_dir)
    manifest = out / "manifest.txt"
    if manifest.exists() and not force:
        raise DataError(f"checkpoint already exists at {out} (use force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    lines = [
        _MANIFEST_HEAD,
        f"in_channels={model.cfg.in_channels}",
        "widths=" + ",".join(str(w) for w in model.cfg.widths),
        f"kernel={model.cfg.kernel}",
        f"levels={model.cfg.levels}",
        f"seed={model.cfg.seed}",
    ]
    order = 0
    for name, *_ in model.plan:
        for part, role in ((f"{name}.weight", "conv_weight"), (f"{name}.bias", "conv_bias")):
            arr = model.params[part]
            shape = "x".join(str(e) for e in arr.shape)
            lines.append(f"param {order} {part} {role} {shape}")
            ntf_write(arr, out / f"{part}.ntf")
            order += 1
    manifest.write_text("\n".join(lines) + "\n")


def load_checkpoint(in_dir: str | Path) -> Model:
    base = Path(in_dir)
    manifest = base / "manifest.txt"
    try:
        lines = manifest.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint manifest {manifest}: {exc}") from exc
    if not lines or lines[0] != _MANIFEST_HEAD:
        raise DataError(f"{manifest}: not a casym checkpoint manifest")
    fields = {}
    entries = []
    for line in lines[1:]:
        if not line.strip():
            continue
        if line.startswith("param "):
            _, order, name, role, shape = line.split()
            entries.append((int(order), name, role, tuple(int(e) for e in shape.split("x"))))
        else:
            key, _, value = line.partition("=")
            fields[key] = value
    try:
        cfg = ModelConfig(
            in_channels=int(fields["in_channels"]),
            widths=tuple(int(w) for w in fields["widths"].split(",")),
            kernel=int(fields["kernel"]),
            levels=int(fields["levels"]),
            seed=int(fields["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"{manifest}: bad checkpoint config ({exc})") from exc
    model = build_model(cfg)
    seen = set()
    for _, name, _, shape in sorted(entries):
        if name not in model.params:
            raise DataError(f"{manifest}: unknown parameter {name!r}")
        arr = ntf_read(base / f"{name}.ntf").astype(np.float32, copy=False)
        if arr.shape != shape or arr.shape != model.params[name].shape:
            raise DataError(
                f"{manifest}: parameter {name} has shape {arr.shape}, "
                f"expected {model.params[name].shape}"
            )
        model.params[name] = arr
        seen.add(name)
    missing = set(model.params) - seen
    if missing:
        raise DataError(f"{manifest}: missing parameters {sorted(missing)}")
    return model

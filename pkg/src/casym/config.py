"""Plain-text key=value experiment configuration with a strict schema.

Unknown keys are rejected. Run directories are named by a hash of the keys
that define the experiment identity (data.*, split.*, model.*, train.*,
init.*), so each point of an experiment grid lands in its own directory and
identical configs reuse it. Analysis-stage keys (saliency.*, audit.*,
metrics.*, surgery.*, plot.*) parameterize outputs inside the same run and
re-running an analysis overwrites its previous outputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .errors import ConfigError


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


@dataclass(frozen=True)
class _Key:
    parse: Callable
    default: object
    check: Callable[[object], bool] = lambda v: True
    help: str = ""


def _choice(*options: str) -> Callable[[object], bool]:
    return lambda v: v in options


SCHEMA: dict[str, _Key] = {
    "out.dir": _Key(str, "runs", help="root directory for run outputs"),
    # synthetic data / stacking
    "data.seed": _Key(int, 0),
    "data.z": _Key(int, 64, lambda v: v >= 16),
    "data.h": _Key(int, 64, lambda v: v >= 16),
    "data.w": _Key(int, 64, lambda v: v >= 16),
    "data.objects": _Key(int, 2, lambda v: v >= 1),
    "data.noise": _Key(float, 0.02, lambda v: v >= 0),
    "data.volume": _Key(str, "", help="volume dir for stack (default <run>/volume)"),
    "data.half_window": _Key(int, 1, lambda v: v >= 1),
    "data.class_of_interest": _Key(int, 1, lambda v: v >= 0),
    # split
    "split.train": _Key(float, 0.8, lambda v: v > 0),
    "split.val": _Key(float, 0.1, lambda v: v > 0),
    "split.test": _Key(float, 0.1, lambda v: v > 0),
    "split.seed": _Key(int, 0),
    # model
    "model.widths": _Key(_int_list, (8, 16), lambda v: len(v) >= 1 and all(w >= 1 for w in v)),
    "model.kernel": _Key(int, 3, lambda v: v >= 1 and v % 2 == 1),
    "model.levels": _Key(int, 2, lambda v: v >= 1),
    "model.seed": _Key(int, 0),
    # training
    "train.lr": _Key(float, 0.05, lambda v: v >= 0),
    "train.weight_decay": _Key(float, 1e-4, lambda v: v >= 0),
    "train.steps": _Key(int, 500, lambda v: v >= 1),
    "train.batch": _Key(int, 4, lambda v: v >= 1),
    "train.seed": _Key(int, 0),
    "train.flip_augment": _Key(_bool, True),
    "train.eval_every": _Key(int, 50, lambda v: v >= 1),
    # initialization strategy for train
    "init.kind": _Key(str, "random", _choice("random", "pretrained", "uniform", "average")),
    "init.source": _Key(str, ""),
    "init.channel": _Key(str, "green"),
    "init.adapt": _Key(str, "center_crop", _choice("center_crop", "bilinear")),
    # saliency
    "saliency.checkpoint": _Key(str, "", help="checkpoint dir (default <run>/checkpoint)"),
    "saliency.split": _Key(str, "test", _choice("train", "val", "test", "all")),
    "saliency.methods": _Key(str, "foreground,full_output"),
    "saliency.threshold": _Key(float, 0.85, lambda v: 0 <= v <= 1),
    "saliency.points": _Key(int, 100, lambda v: v >= 1),
    "saliency.seed": _Key(int, 0),
    "saliency.patch": _Key(int, 16, lambda v: v >= 1),
    "saliency.layer": _Key(str, "bridge.b"),
    "saliency.unstable": _Key(_bool, False, help="enable the channel-occluded CAM method"),
    "saliency.channel_mode": _Key(str, "diff", _choice("diff", "occluded")),
    # surgery
    "surgery.input": _Key(str, "", help="checkpoint dir or first-conv kernel NTF"),
    "surgery.strategy": _Key(str, "uniform-green"),
    "surgery.seed": _Key(int, 0),
    "surgery.out": _Key(str, ""),
    # audit
    "audit.checkpoints": _Key(str, "", help="comma list of checkpoint dirs"),
    "audit.labels": _Key(str, ""),
    "audit.split": _Key(str, "test", _choice("train", "val", "test", "all")),
    # bias metric options
    "metrics.bins": _Key(int, 256, lambda v: v >= 2),
    "metrics.pooling": _Key(str, "pooled", _choice("pooled", "per_image")),
    "metrics.threshold": _Key(float, 0.5, lambda v: 0 < v < 1),
    # plots
    "plot.input": _Key(str, ""),
    "plot.equalize": _Key(_bool, False),
    "plot.bins": _Key(int, 64, lambda v: v >= 2),
}


def _set_value(values: dict, key: str, raw: str, origin: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(f"{origin}: unknown config key {key!r}")
    spec = SCHEMA[key]
    try:
        value = spec.parse(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{origin}: bad value for {key}: {exc}") from exc
    if not spec.check(value):
        raise ConfigError(f"{origin}: value {raw.strip()!r} out of range for {key}")
    values[key] = value


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict:
    """Resolved config dict from defaults, an optional file, and --set overrides."""
    values = {key: spec.default for key, spec in SCHEMA.items()}
    if path is not None:
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        for lineno, line in enumerate(lines, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = stripped.partition("=")
            _set_value(values, key.strip(), raw, f"{path}:{lineno}")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, _, raw = item.partition("=")
        _set_value(values, key.strip(), raw, f"--set {key.strip()}")
    _cross_validate(values)
    return values


def _cross_validate(values: dict) -> None:
    total = values["split.train"] + values["split.val"] + values["split.test"]
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {total}")
    if len(values["model.widths"]) != values["model.levels"]:
        raise ConfigError(
            f"model.widths needs one width per level: "
            f"{len(values['model.widths'])} widths vs levels={values['model.levels']}"
        )
    if values["saliency.threshold"] == 0 and values["metrics.threshold"] == 0:
        raise ConfigError("thresholds cannot both be zero")


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def canonical_lines(values: dict, keys: list[str] | None = None) -> list[str]:
    if keys is None:
        keys = sorted(values)
    return [f"{k}={_format_value(values[k])}" for k in keys]


_HASH_PREFIXES = ("data.", "split.", "model.", "train.", "init.")


def config_hash(values: dict) -> str:
    """12-hex digest over the experiment-identity keys: names the run directory."""
    keys = sorted(k for k in values if k.startswith(_HASH_PREFIXES))
    blob = "\n".join(canonical_lines(values, keys)).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def run_dir(values: dict) -> Path:
    return Path(values["out.dir"]) / config_hash(values)


def in_channels(values: dict) -> int:
    return 2 * values["data.half_window"] + 1

"""Command-line pipeline: synth, stack, train, surgery, saliency, audit, plot.

Every command resolves one config (file + ``--set`` overrides) and works
inside a run directory named by the config hash. All artifacts except
``meta.json`` (which holds timestamps) are byte-reproducible from config and
seeds alone. Exit codes: 0 ok, 2 config error, 3 data error, 4 divergence.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import bias, net, quality, saliency, surgery, svgplot, volume
from .config import canonical_lines, in_channels, load_config, run_dir
from .errors import ConfigError, DataError, ToolError
from .tensor import ntf_read, ntf_write


def _write_run_files(cfg: dict, run: Path) -> None:
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.txt").write_text("\n".join(canonical_lines(cfg)) + "\n")
    meta = {"created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
    (run / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _model_config(cfg: dict) -> net.ModelConfig:
    return net.ModelConfig(
        in_channels=in_channels(cfg),
        widths=cfg["model.widths"],
        kernel=cfg["model.kernel"],
        levels=cfg["model.levels"],
        seed=cfg["model.seed"],
    )


def _init_strategy(cfg: dict) -> surgery.InitStrategy:
    return surgery.InitStrategy(
        kind=cfg["init.kind"],
        source=cfg["init.source"] or None,
        channel=surgery.parse_channel(cfg["init.channel"]),
        adapt=cfg["init.adapt"],
    )


def _parse_strategy_name(name: str, cfg: dict) -> surgery.InitStrategy:
    name = name.strip().lower()
    source = cfg["init.source"] or None
    adapt = cfg["init.adapt"]
    if name == "random":
        return surgery.InitStrategy(kind="random")
    if name == "average":
        return surgery.InitStrategy(kind="average", source=source, adapt=adapt)
    if name == "pretrained":
        if not source:
            raise ConfigError("surgery.strategy=pretrained needs init.source")
        return surgery.InitStrategy(kind="pretrained", source=source, adapt=adapt)
    if name.startswith("uniform-"):
        channel = surgery.parse_channel(name[len("uniform-") :])
        return surgery.InitStrategy(kind="uniform", source=source, channel=channel, adapt=adapt)
    raise ConfigError(
        f"unknown surgery strategy {name!r}: use random, average, pretrained or uniform-<channel>"
    )


def _load_split_samples(cfg: dict, run: Path, part: str) -> list[volume.Sample2DPlus]:
    sample_dir = run / "samples"
    splits = volume.load_split_lists(sample_dir / "splits.json")
    if part == "all":
        stems = sorted(splits["train"] + splits["val"] + splits["test"])
    else:
        stems = splits[part]
    return volume.load_samples(sample_dir, stems)


def _method_list(cfg: dict) -> list[str]:
    methods = [m.strip() for m in cfg["saliency.methods"].split(",") if m.strip()]
    for m in methods:
        if m not in saliency.METHODS:
            raise ConfigError(f"unknown saliency method {m!r}; choose from {saliency.METHODS}")
        if m == "gradcampp_channel" and not cfg["saliency.unstable"]:
            raise ConfigError(
                "gradcampp_channel is unstable by construction; "
                "opt in with saliency.unstable=true"
            )
    if not methods:
        raise ConfigError("saliency.methods is empty")
    return methods


def _compute_map(
    model: net.Model, sample: volume.Sample2DPlus, method: str, cfg: dict
) -> saliency.SaliencyMap:
    sample_id = f"z{sample.center_index:04d}"
    try:
        return saliency.compute_saliency(
            model,
            sample.input,
            method,
            threshold=cfg["saliency.threshold"],
            k=cfg["saliency.points"],
            seed=cfg["saliency.seed"],
            patch=cfg["saliency.patch"],
            layer=cfg["saliency.layer"],
            channel_mode=cfg["saliency.channel_mode"],
            sample_id=sample_id,
        )
    except DataError:
        if method != "foreground100":
            raise
        # empty prediction foreground: keep the audit going with a flagged zero map
        zero = np.zeros_like(sample.input, dtype=np.float32)
        return saliency.SaliencyMap(
            values=zero,
            method=method,
            meta={"sample_id": sample_id, "flags": ["empty_foreground"]},
        )


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(cfg: dict, force: bool = False) -> Path:
    run = run_dir(cfg)
    vol_dir = run / "volume"
    if (vol_dir / "image.ntf").exists() and not force:
        raise DataError(f"volume already exists at {vol_dir} (re-run with --force)")
    v = volume.synth_volume(
        seed=cfg["data.seed"],
        z=cfg["data.z"],
        h=cfg["data.h"],
        w=cfg["data.w"],
        n_objects=cfg["data.objects"],
        noise=cfg["data.noise"],
    )
    _write_run_files(cfg, run)
    vol_dir.mkdir(parents=True, exist_ok=True)
    ntf_write(v.image, vol_dir / "image.ntf")
    ntf_write(v.mask, vol_dir / "mask.ntf")
    print(f"synth: wrote volume {v.shape} under {vol_dir}")
    return run


def cmd_stack(cfg: dict, force: bool = False) -> Path:
    run = run_dir(cfg)
    vol_dir = Path(cfg["data.volume"]) if cfg["data.volume"] else run / "volume"
    v = volume.load_volume(vol_dir / "image.ntf", vol_dir / "mask.ntf")
    samples = volume.stack_all(v, cfg["data.half_window"], cfg["data.class_of_interest"])
    train, val, test = volume.dataset_split(
        samples,
        (cfg["split.train"], cfg["split.val"], cfg["split.test"]),
        cfg["split.seed"],
    )
    _write_run_files(cfg, run)
    sample_dir = run / "samples"
    volume.save_samples(samples, sample_dir)
    volume.save_split_lists(sample_dir / "splits.json", train, val, test)
    print(
        f"stack: {len(samples)} samples ({len(train)} train / {len(val)} val / "
        f"{len(test)} test) under {sample_dir}"
    )
    return run


def cmd_train(cfg: dict, force: bool = False) -> Path:
    run = run_dir(cfg)
    ckpt_dir = run / "checkpoint"
    if (ckpt_dir / "manifest.txt").exists() and not force:
        raise DataError(f"checkpoint already exists at {ckpt_dir} (re-run with --force)")
    train_s = _load_split_samples(cfg, run, "train")
    val_s = _load_split_samples(cfg, run, "val")
    model = surgery.apply_strategy(
        net.build_model(_model_config(cfg)), _init_strategy(cfg), cfg["model.seed"]
    )
    tc = net.TrainConfig(
        lr=cfg["train.lr"],
        weight_decay=cfg["train.weight_decay"],
        steps=cfg["train.steps"],
        batch=cfg["train.batch"],
        seed=cfg["train.seed"],
        flip_augment=cfg["train.flip_augment"],
        eval_every=cfg["train.eval_every"],
    )
    model, history = net.train(model, train_s, val_s, tc)
    _write_run_files(cfg, run)
    net.save_checkpoint(model, ckpt_dir, force=True)
    evals = dict(history.val_dice)
    lines = ["step,loss,val_dice"]
    for step, loss in history.loss:
        dice_cell = repr(float(evals[step])) if step in evals else ""
        lines.append(f"{step},{float(loss)!r},{dice_cell}")
    (run / "history.csv").write_text("\n".join(lines) + "\n")
    final = history.val_dice[-1][1] if history.val_dice else float("nan")
    print(f"train: {tc.steps} steps, final val dice {final:.4f}, checkpoint at {ckpt_dir}")
    return run


def cmd_surgery(cfg: dict, force: bool = False) -> Path:
    run = run_dir(cfg)
    src = cfg["surgery.input"]
    if not src:
        raise ConfigError("surgery.input must name a checkpoint dir or kernel NTF")
    strategy = _parse_strategy_name(cfg["surgery.strategy"], cfg)
    _write_run_files(cfg, run)
    src_path = Path(src)
    if src_path.is_dir():
        out = Path(cfg["surgery.out"]) if cfg["surgery.out"] else run / f"surgery-{cfg['surgery.strategy']}"
        if (out / "manifest.txt").exists() and not force:
            raise DataError(f"surgery output already exists at {out} (re-run with --force)")
        model = net.load_checkpoint(src_path)
        net.save_checkpoint(surgery.apply_to_checkpoint(model, strategy), out, force=True)
        print(f"surgery: {cfg['surgery.strategy']} checkpoint written to {out}")
    else:
        if strategy.kind not in ("uniform", "average"):
            raise ConfigError("bare-kernel surgery supports only uniform/average strategies")
        kernel = ntf_read(src_path).astype(np.float32, copy=False)
        if kernel.ndim != 4:
            raise DataError(f"{src_path}: kernel NTF must be [out,N,k,k], got {kernel.shape}")
        if strategy.kind == "uniform":
            kernel = surgery.uniformize_channel(kernel, strategy.channel)
        else:
            kernel = surgery.average_channels(kernel)
        out = Path(cfg["surgery.out"]) if cfg["surgery.out"] else run / f"surgery-{cfg['surgery.strategy']}.ntf"
        if out.exists() and not force:
            raise DataError(f"surgery output already exists at {out} (re-run with --force)")
        out.parent.mkdir(parents=True, exist_ok=True)
        ntf_write(kernel, out)
        print(f"surgery: {cfg['surgery.strategy']} kernel written to {out}")
    return run


def cmd_saliency(cfg: dict, force: bool = False) -> Path:
    run = run_dir(cfg)
    methods = _method_list(cfg)
    ckpt = Path(cfg["saliency.checkpoint"]) if cfg["saliency.checkpoint"] else run / "checkpoint"
    model = net.load_checkpoint(ckpt)
    samples = _load_split_samples(cfg, run, cfg["saliency.split"])
    _write_run_files(cfg, run)
    for method in methods:
        out = run / "saliency" / method
        out.mkdir(parents=True, exist_ok=True)
        for sample in samples:
            sal = _compute_map(model, sample, method, cfg)
            saliency.save_saliency(sal, out / f"z{sample.center_index:04d}.ntf")
    print(f"saliency: {len(samples)} samples x {len(methods)} methods under {run / 'saliency'}")
    return run


def _mean_report(reports: list[bias.BiasReport]) -> bias.BiasReport:
    # per-image mode: average the per-sample reports entrywise
    first = reports[0]
    flags = sorted({f for r in reports for f in r.flags})
    stack_w = np.mean([r.pairwise_w for r in reports], axis=0)
    stack_js = np.mean([r.js for r in reports], axis=0)
    stack_b = np.mean([r.bhatt for r in reports], axis=0)
    return bias.BiasReport(
        model=first.model,
        method=first.method,
        swd=float(np.mean([r.swd for r in reports])),
        fwd=float(np.mean([r.fwd for r in reports])),
        pairwise_w=stack_w,
        js=stack_js,
        bhatt=stack_b,
        flags=flags,
    )


def _audit_one(
    model: net.Model, label: str, samples: list, methods: list[str], cfg: dict
) -> tuple[list[bias.BiasReport], dict]:
    reports = []
    for method in methods:
        maps = [_compute_map(model, s, method, cfg) for s in samples]
        map_flags = sorted({f for m in maps for f in m.flags})
        if method == "gradcampp_channel":
            map_flags = sorted(set(map_flags) | {"unstable_method"})
        if cfg["metrics.pooling"] == "pooled":
            dists = bias.channel_distributions(maps)
            rep = bias.build_bias_report(
                dists, method, label, cfg["metrics.bins"], extra_flags=map_flags
            )
        else:
            per = [
                bias.build_bias_report(
                    bias.channel_distributions([m]), method, label, cfg["metrics.bins"]
                )
                for m in maps
            ]
            rep = _mean_report(per)
            rep.flags = sorted(set(rep.flags) | set(map_flags))
        reports.append(rep)
    scores: dict[str, quality.ScoreSummary] = {}
    per_metric: dict[str, list[float]] = {m: [] for m in quality.METRIC_NAMES}
    for s in samples:
        probs = net.predict_probs(model, s.input)
        c = quality.confusion(probs, s.center_mask[None], cfg["metrics.threshold"])
        for m in quality.METRIC_NAMES:
            per_metric[m].append(quality.score(m, c))
    for m in quality.METRIC_NAMES:
        scores[m] = quality.summarize(per_metric[m])
    return reports, scores


def _bias_csv(labels: list[str], methods: list[str], table: dict) -> str:
    columns = [f"{kind}_{m}" for m in methods for kind in ("swd", "fwd")]
    best: dict[str, str] = {}
    worst: dict[str, str] = {}
    for col in columns:
        vals = {lab: table[(lab, col)] for lab in labels if math.isfinite(table[(lab, col)])}
        if len(vals) > 1:
            best[col] = min(vals, key=vals.get)
            worst[col] = max(vals, key=vals.get)
    lines = ["model," + ",".join(columns) + ",best_in,worst_in"]
    for lab in labels:
        cells = [repr(float(table[(lab, col)])) for col in columns]
        best_in = ";".join(c for c in columns if best.get(c) == lab)
        worst_in = ";".join(c for c in columns if worst.get(c) == lab)
        lines.append(f"{lab}," + ",".join(cells) + f",{best_in},{worst_in}")
    return "\n".join(lines) + "\n"


def _quality_csv(labels: list[str], scores: dict) -> str:
    header = ["model"]
    for m in quality.METRIC_NAMES:
        header += [f"{m}_mean", f"{m}_se"]
    lines = [",".join(header)]
    for lab in labels:
        row = [lab]
        for m in quality.METRIC_NAMES:
            s = scores[lab][m]
            row += [repr(float(s.mean)), repr(float(s.se))]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def cmd_audit(cfg: dict, force: bool = False) -> Path:
    run = run_dir(cfg)
    methods = _method_list(cfg)
    if cfg["audit.checkpoints"]:
        ckpts = [Path(p.strip()) for p in cfg["audit.checkpoints"].split(",") if p.strip()]
    else:
        ckpts = [run / "checkpoint"]
    if cfg["audit.labels"]:
        labels = [s.strip() for s in cfg["audit.labels"].split(",") if s.strip()]
        if len(labels) != len(ckpts):
            raise ConfigError(
                f"audit.labels has {len(labels)} entries for {len(ckpts)} checkpoints"
            )
    else:
        labels = []
        for p in ckpts:
            base = p.name if p.name != "checkpoint" else p.parent.name
            lab = base
            idx = 2
            while lab in labels:
                lab = f"{base}-{idx}"
                idx += 1
            labels.append(lab)
    samples = _load_split_samples(cfg, run, cfg["audit.split"])
    _write_run_files(cfg, run)
    all_reports: list[bias.BiasReport] = []
    table: dict[tuple[str, str], float] = {}
    all_scores: dict[str, dict] = {}
    for ckpt, label in zip(ckpts, labels):
        model = net.load_checkpoint(ckpt)
        reports, scores = _audit_one(model, label, samples, methods, cfg)
        all_reports += reports
        all_scores[label] = scores
        for rep in reports:
            table[(label, f"swd_{rep.method}")] = rep.swd
            table[(label, f"fwd_{rep.method}")] = rep.fwd
    payload = {
        "labels": labels,
        "methods": methods,
        "pooling": cfg["metrics.pooling"],
        "bins": cfg["metrics.bins"],
        "split": cfg["audit.split"],
        # distances are scale-equivariant, so the normalization in force and
        # the surgery rescaling policy are part of the record
        "conventions": {
            "saliency_intensity": "absolute gradient, raw (no normalization)",
            "prediction": "sigmoid probability",
            "surgery_rescaling": "none",
        },
        "reports": [bias.report_to_dict(r) for r in all_reports],
        "quality": {
            lab: {
                m: {"mean": all_scores[lab][m].mean, "se": all_scores[lab][m].se,
                    "flags": all_scores[lab][m].flags}
                for m in quality.METRIC_NAMES
            }
            for lab in labels
        },
    }
    (run / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (run / "bias.csv").write_text(_bias_csv(labels, methods, table))
    (run / "quality.csv").write_text(_quality_csv(labels, all_scores))
    print(f"audit: {len(labels)} model(s) x {len(methods)} method(s) -> {run / 'report.json'}")
    return run


def cmd_plot(cfg: dict, force: bool = False) -> Path:
    run = run_dir(cfg)
    if cfg["plot.input"]:
        src = Path(cfg["plot.input"])
    elif (run / "saliency" / "foreground").is_dir():
        src = run / "saliency" / "foreground"
    else:
        src = run / "report.json"
    out = run / "plots"
    _write_run_files(cfg, run)
    if src.is_dir():
        paths = sorted(src.glob("*.ntf"))
        if not paths:
            raise DataError(f"no saliency maps under {src}")
        maps = [saliency.load_saliency(p) for p in paths]
        name = src.name or "saliency"
        # curves: density per channel of the sample-averaged map
        mean_map = np.mean([m.values for m in maps], axis=0)
        svgplot.channel_curves_svg(
            [mean_map[c].reshape(-1) for c in range(mean_map.shape[0])],
            out / f"{name}-curves.svg",
            bins=cfg["plot.bins"],
            equalize=cfg["plot.equalize"],
            title=f"averaged {name} saliency per channel",
        )
        # histograms: raw intensities pooled over every map
        dists = bias.channel_distributions(maps)
        svgplot.channel_histograms_svg(
            [d.samples for d in dists],
            out / f"{name}-hist.svg",
            bins=min(cfg["plot.bins"], 48),
            equalize=cfg["plot.equalize"],
            title=f"{name} intensity histograms",
        )
    elif src.suffix == ".json":
        payload = json.loads(src.read_text())
        rows: dict[str, dict[str, float]] = {}
        for rep in payload.get("reports", []):
            row = rows.setdefault(rep["model"], {})
            if rep["swd"] is not None:
                row[f"swd_{rep['method']}"] = rep["swd"]
            if rep["fwd"] is not None:
                row[f"fwd_{rep['method']}"] = rep["fwd"]
        svgplot.metric_bars_svg(sorted(rows.items()), out / "bias-scores.svg")
    else:
        raise DataError(f"plot.input {src} is neither a saliency dir nor a report JSON")
    print(f"plot: SVG files under {out}")
    return run


_COMMANDS = {
    "synth": cmd_synth,
    "stack": cmd_stack,
    "train": cmd_train,
    "surgery": cmd_surgery,
    "saliency": cmd_saliency,
    "audit": cmd_audit,
    "plot": cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="casym",
        description="Audit and mitigate channel-attention asymmetry in 2D+ segmentation.",
        epilog=(
            "Channel naming (3-channel stacks): 0=red (first slice), "
            "1=green (middle), 2=blue (last)."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument(
            "--set",
            action="append",
            dest="overrides",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        _COMMANDS[args.command](cfg, force=args.force)
    except ToolError as exc:
        print(f"casym {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Static SVG plots built with ElementTree (always well-formed XML).

Histogram equalization here is strictly a display transform: it rescales
intensities by the pooled empirical CDF so methods with very different
dynamic ranges plot on a comparable axis. Metric files never see it.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

# channel 0/1/2 follow the red/green/blue naming convention
PALETTE = ["#d62728", "#2ca02c", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"]

_W, _H = 640, 400
_MARGIN = 56


def _root() -> ET.Element:
    return ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(_W),
        height=str(_H),
        viewBox=f"0 0 {_W} {_H}",
    )


def _frame(svg: ET.Element, title: str) -> None:
    ET.SubElement(
        svg, "rect", x="0", y="0", width=str(_W), height=str(_H), fill="white"
    )
    ET.SubElement(
        svg,
        "rect",
        x=str(_MARGIN),
        y=str(_MARGIN),
        width=str(_W - 2 * _MARGIN),
        height=str(_H - 2 * _MARGIN),
        fill="none",
        stroke="#333",
        attrib={"stroke-width": "1"},
    )
    label = ET.SubElement(
        svg, "text", x=str(_W // 2), y="28", attrib={"text-anchor": "middle", "font-size": "15"}
    )
    label.text = title


def _to_plot(xs: np.ndarray, ys: np.ndarray, ymax: float) -> str:
    px = _MARGIN + xs * (_W - 2 * _MARGIN)
    py = _H - _MARGIN - (ys / ymax if ymax > 0 else ys) * (_H - 2 * _MARGIN)
    return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))


def _equalize(channel_values: list[np.ndarray]) -> list[np.ndarray]:
    pooled = np.sort(np.concatenate(channel_values))
    n = len(pooled)
    return [np.searchsorted(pooled, v, side="right") / n for v in channel_values]


def _binned(channel_values: list[np.ndarray], bins: int) -> tuple[np.ndarray, list[np.ndarray]]:
    lo = min(float(v.min()) for v in channel_values)
    hi = max(float(v.max()) for v in channel_values)
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    masses = [np.histogram(v, bins=edges)[0] / max(len(v), 1) for v in channel_values]
    return edges, masses


def channel_curves_svg(
    channel_values: list[np.ndarray],
    path: str | Path,
    bins: int = 64,
    equalize: bool = False,
    title: str = "per-channel saliency intensity",
) -> None:
    """One density curve per channel over a shared intensity axis."""
    if equalize:
        channel_values = _equalize(channel_values)
    edges, masses = _binned(channel_values, bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    span = edges[-1] - edges[0]
    xs = (centers - edges[0]) / span
    ymax = max(float(m.max()) for m in masses) or 1.0
    svg = _root()
    _frame(svg, title)
    for c, mass in enumerate(masses):
        color = PALETTE[c % len(PALETTE)]
        ET.SubElement(
            svg,
            "polyline",
            attrib={
                "class": "channel-curve",
                "points": _to_plot(xs, mass.astype(np.float64), ymax),
                "fill": "none",
                "stroke": color,
                "stroke-width": "2",
            },
        )
        tag = ET.SubElement(
            svg,
            "text",
            x=str(_W - _MARGIN + 6),
            y=str(_MARGIN + 16 * (c + 1)),
            fill=color,
            attrib={"font-size": "12"},
        )
        tag.text = f"ch{c}"
    _write(svg, path)


def channel_histograms_svg(
    channel_values: list[np.ndarray],
    path: str | Path,
    bins: int = 32,
    equalize: bool = False,
    title: str = "per-channel intensity histograms",
) -> None:
    """Per-channel bar histograms on shared bins, one group per channel."""
    if equalize:
        channel_values = _equalize(channel_values)
    edges, masses = _binned(channel_values, bins)
    n = len(masses)
    ymax = max(float(m.max()) for m in masses) or 1.0
    svg = _root()
    _frame(svg, title)
    plot_w = _W - 2 * _MARGIN
    plot_h = _H - 2 * _MARGIN
    bar_w = plot_w / (bins * n)
    for c, mass in enumerate(masses):
        color = PALETTE[c % len(PALETTE)]
        group = ET.SubElement(svg, "g", attrib={"class": "channel-hist"})
        for b, m in enumerate(mass):
            height = plot_h * (m / ymax)
            if height <= 0:
                continue
            ET.SubElement(
                group,
                "rect",
                x=f"{_MARGIN + (b * n + c) * bar_w:.2f}",
                y=f"{_H - _MARGIN - height:.2f}",
                width=f"{max(bar_w - 0.5, 0.5):.2f}",
                height=f"{height:.2f}",
                fill=color,
            )
    _write(svg, path)


def metric_bars_svg(
    rows: list[tuple[str, dict[str, float]]],
    path: str | Path,
    title: str = "bias scores",
) -> None:
    """Grouped bars: one group per labeled row, one bar per metric column."""
    if not rows:
        raise ValueError("nothing to plot")
    columns = sorted({k for _, vals in rows for k in vals})
    vmax = max((abs(v) for _, vals in rows for v in vals.values()), default=1.0) or 1.0
    svg = _root()
    _frame(svg, title)
    plot_w = _W - 2 * _MARGIN
    plot_h = _H - 2 * _MARGIN
    group_w = plot_w / len(rows)
    bar_w = group_w / (len(columns) + 1)
    for r, (label, vals) in enumerate(rows):
        lab = ET.SubElement(
            svg,
            "text",
            x=f"{_MARGIN + (r + 0.5) * group_w:.2f}",
            y=str(_H - _MARGIN + 18),
            attrib={"text-anchor": "middle", "font-size": "11"},
        )
        lab.text = label
        for b, col in enumerate(columns):
            v = vals.get(col)
            if v is None:
                continue
            height = plot_h * (abs(v) / vmax)
            ET.SubElement(
                svg,
                "rect",
                attrib={
                    "class": "metric-bar",
                    "x": f"{_MARGIN + r * group_w + (b + 0.5) * bar_w:.2f}",
                    "y": f"{_H - _MARGIN - height:.2f}",
                    "width": f"{bar_w * 0.9:.2f}",
                    "height": f"{height:.2f}",
                    "fill": PALETTE[b % len(PALETTE)],
                },
            )
    _write(svg, path)


def _write(svg: ET.Element, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    ET.ElementTree(svg).write(path, encoding="unicode", xml_declaration=True)
    with open(path, "a") as fh:
        fh.write("\n")

"""Channel-attention bias metrics: pooled intensity distributions, exact 1-D
Wasserstein distances, and the symmetric/full channel bias scores.

The symmetric score averages the distance between mirrored channel pairs
around the center channel and is the primary bias measure; the full score
averages over all unordered pairs and only indicates bias in combination
with a high symmetric score. Distances are computed on raw intensities in
float64; histogram equalization is a display-only transform elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .saliency import SaliencyMap

LN2 = math.log(2.0)


@dataclass
class ChannelDistribution:
    channel: int
    samples: np.ndarray  # sorted ascending, float64, nonnegative

    @property
    def count(self) -> int:
        return len(self.samples)


@dataclass
class Histogram:
    edges: np.ndarray  # B+1 strictly increasing edges
    mass: np.ndarray  # B nonnegative values summing to 1
    flags: list[str] = field(default_factory=list)


@dataclass
class BiasReport:
    model: str
    method: str
    swd: float
    fwd: float
    pairwise_w: np.ndarray  # [N,N] symmetric, zero diagonal
    js: np.ndarray
    bhatt: np.ndarray  # may contain +inf for disjoint supports
    flags: list[str] = field(default_factory=list)

    @property
    def n_channels(self) -> int:
        return self.pairwise_w.shape[0]


def channel_distributions(maps: list[SaliencyMap]) -> list[ChannelDistribution]:
    """Pool every pixel intensity per channel across all maps, sorted ascending."""
    if not maps:
        raise DataError("cannot build channel distributions from an empty map list")
    methods = {m.method for m in maps}
    if len(methods) > 1:
        raise DataError(f"mixed saliency methods in one pool: {sorted(methods)}")
    n = maps[0].n_channels
    if any(m.n_channels != n for m in maps):
        raise DataError("saliency maps disagree on channel count")
    dists = []
    for c in range(n):
        pooled = np.concatenate([m.values[c].reshape(-1) for m in maps]).astype(np.float64)
        pooled.sort()
        dists.append(ChannelDistribution(channel=c, samples=pooled))
    return dists


def wasserstein_1d(a: ChannelDistribution, b: ChannelDistribution) -> float:
    """Exact W1 between two empirical distributions via the CDF-difference integral."""
    xa, xb = a.samples, b.samples
    if xa.size == 0 or xb.size == 0:
        raise DataError("Wasserstein distance needs nonempty samples")
    merged = np.concatenate([xa, xb])
    merged.sort()
    deltas = np.diff(merged)
    if deltas.size == 0:
        return 0.0
    cdf_a = np.searchsorted(xa, merged[:-1], side="right") / xa.size
    cdf_b = np.searchsorted(xb, merged[:-1], side="right") / xb.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


def swd(dists: list[ChannelDistribution]) -> float:
    """Mean W1 between mirrored channel pairs around the center channel."""
    n = len(dists)
    if n < 3 or n % 2 == 0:
        raise DataError(f"symmetric score needs an odd channel count >= 3, got {n}")
    mid = (n - 1) // 2
    vals = [wasserstein_1d(dists[mid - j], dists[mid + j]) for j in range(1, mid + 1)]
    return float(np.mean(vals))


def fwd(dists: list[ChannelDistribution]) -> float:
    """Mean W1 over all unordered channel pairs."""
    n = len(dists)
    if n < 2:
        raise DataError(f"full score needs at least 2 channels, got {n}")
    vals = [
        wasserstein_1d(dists[i], dists[j]) for i in range(n) for j in range(i + 1, n)
    ]
    return float(np.mean(vals))


def shared_histogram(dists: list[ChannelDistribution], bins: int = 256) -> list[Histogram]:
    """Equal-width histograms over the shared [min,max] range of all channels."""
    if bins < 2:
        raise DataError(f"need at least 2 bins, got {bins}")
    if not dists:
        raise DataError("no distributions to bin")
    lo = min(float(d.samples[0]) for d in dists)
    hi = max(float(d.samples[-1]) for d in dists)
    if hi > lo:
        edges = np.linspace(lo, hi, bins + 1)
        flags = []
    else:
        # all values identical: single-bin fallback
        edges = np.array([lo - 0.5, lo + 0.5])
        flags = ["degenerate_range"]
    out = []
    for d in dists:
        counts, _ = np.histogram(d.samples, bins=edges)
        out.append(Histogram(edges=edges, mass=counts / d.count, flags=list(flags)))
    return out


def _check_shared_edges(ha: Histogram, hb: Histogram) -> None:
    if ha.edges.shape != hb.edges.shape or not np.array_equal(ha.edges, hb.edges):
        raise DataError("histograms must share identical bin edges")


def _kl(p: np.ndarray, m: np.ndarray) -> float:
    # 0*log(0) := 0; m > 0 wherever p > 0 by construction of the mixture
    ratio = np.divide(p, m, out=np.ones_like(p), where=p > 0)
    return float(np.sum(np.where(p > 0, p * np.log(ratio), 0.0)))


def js_divergence(ha: Histogram, hb: Histogram) -> float:
    """Jensen-Shannon divergence (natural log), in [0, ln 2]; 0*log(0) := 0."""
    _check_shared_edges(ha, hb)
    p, q = ha.mass, hb.mass
    m = 0.5 * (p + q)
    return float(min(max(0.5 * (_kl(p, m) + _kl(q, m)), 0.0), LN2))


def bhattacharyya(ha: Histogram, hb: Histogram) -> float:
    """-ln of the Bhattacharyya coefficient; +inf when supports are disjoint."""
    _check_shared_edges(ha, hb)
    bc = float(np.sum(np.sqrt(ha.mass * hb.mass)))
    if bc <= 0.0:
        return math.inf
    return max(0.0, -math.log(min(bc, 1.0)))


def build_bias_report(
    dists: list[ChannelDistribution],
    method: str,
    model_tag: str,
    bins: int = 256,
    extra_flags: list[str] | None = None,
) -> BiasReport:
    """All pairwise distances plus the symmetric/full scores for one model+method."""
    n = len(dists)
    hists = shared_histogram(dists, bins)
    w = np.zeros((n, n))
    jsm = np.zeros((n, n))
    bm = np.zeros((n, n))
    flags = list(extra_flags or [])
    flags += sorted({f for h in hists for f in h.flags})
    for i in range(n):
        for j in range(i + 1, n):
            w[i, j] = w[j, i] = wasserstein_1d(dists[i], dists[j])
            jsm[i, j] = jsm[j, i] = js_divergence(hists[i], hists[j])
            b = bhattacharyya(hists[i], hists[j])
            if math.isinf(b):
                flags.append(f"disjoint_support_{i}_{j}")
            bm[i, j] = bm[j, i] = b
    return BiasReport(
        model=model_tag,
        method=method,
        swd=swd(dists) if n >= 3 and n % 2 == 1 else float("nan"),
        fwd=fwd(dists),
        pairwise_w=w,
        js=jsm,
        bhatt=bm,
        flags=flags,
    )


def _matrix_to_json(mat: np.ndarray) -> list[list[float | None]]:
    # strict JSON has no Infinity; disjoint-support entries become null,
    # flagged in BiasReport.flags
    return [[None if math.isinf(v) else float(v) for v in row] for row in mat]


def report_to_dict(rep: BiasReport) -> dict:
    return {
        "model": rep.model,
        "method": rep.method,
        "swd": rep.swd,
        "fwd": rep.fwd,
        "pairwise_wasserstein": _matrix_to_json(rep.pairwise_w),
        "jensen_shannon": _matrix_to_json(rep.js),
        "bhattacharyya": _matrix_to_json(rep.bhatt),
        "flags": sorted(rep.flags),
    }

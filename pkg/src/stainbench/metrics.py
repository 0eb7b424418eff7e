"""Quantitative evaluation of normalized images.

Histogram metrics (intersection, Pearson correlation, Euclidean distance,
Jensen-Shannon divergence) compare per-channel lαβ histograms of the
normalized image against the reference; SSIM compares luminance against
the original image to measure structural preservation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from . import colorspace as cs
from .colorspace import Histogram
from .errors import BinMismatchError, DimensionMismatchError
from .raster import RgbImage

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R 601

REPORT_COLUMNS = ("image_id", "method", "intersection", "pcc", "euclidean",
                  "js_divergence", "ssim", "red_blue_ratio")


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("window_size must be odd and positive")


@dataclass(frozen=True, eq=False)
class HistogramMetricSet:
    """Per-channel scores plus channel-mean aggregates.

    per_channel rows are (intersection, pcc, euclidean, js_divergence) for
    channels 0..2; an undefined PCC (zero-variance histogram) is NaN in its
    row, excluded from the aggregate, and noted in warnings.
    """

    intersection: float
    pcc: float
    euclidean: float
    js_divergence: float
    per_channel: np.ndarray  # (3, 4)
    warnings: tuple = ()


@dataclass(frozen=True)
class MetricReport:
    image_id: str
    histogram_metrics: HistogramMetricSet
    ssim: float
    red_blue_ratio: float


def _js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence with log base 2, bounded to [0, 1]."""
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_p = np.where(p > 0, p * np.log2(p / m), 0.0)
        kl_q = np.where(q > 0, q * np.log2(q / m), 0.0)
    return float(np.clip(0.5 * (kl_p.sum() + kl_q.sum()), 0.0, 1.0))


def _pcc(p: np.ndarray, q: np.ndarray) -> float:
    pc = p - p.mean()
    qc = q - q.mean()
    denom = np.sqrt((pc * pc).sum() * (qc * qc).sum())
    if denom == 0.0:
        return float("nan")
    return float(np.clip((pc * qc).sum() / denom, -1.0, 1.0))


def histogram_metrics(src, ref) -> HistogramMetricSet:
    """Compare three source histograms with three reference histograms.

    Histograms must agree per channel in bin count and value range.
    """
    if len(src) != 3 or len(ref) != 3:
        raise ValueError("expected three histograms per side")
    per_channel = np.empty((3, 4))
    warns = []
    for i, (s, r) in enumerate(zip(src, ref)):
        if not isinstance(s, Histogram) or not isinstance(r, Histogram):
            raise TypeError("inputs must be Histogram instances")
        if s.bin_count != r.bin_count or s.lo != r.lo or s.hi != r.hi:
            raise BinMismatchError(
                f"channel {i}: bins/range ({s.bin_count}, {s.lo}, {s.hi}) vs "
                f"({r.bin_count}, {r.lo}, {r.hi})")
        p, q = s.weights, r.weights
        pcc = _pcc(p, q)
        if np.isnan(pcc):
            warns.append(f"channel {i}: zero-variance histogram, PCC undefined")
        per_channel[i] = (float(np.minimum(p, q).sum()), pcc,
                          float(np.linalg.norm(p - q)), _js_divergence(p, q))
    pcc_vals = per_channel[:, 1]
    defined = pcc_vals[~np.isnan(pcc_vals)]
    if defined.size == 0:
        warns.append("PCC undefined on all channels")
    return HistogramMetricSet(
        intersection=float(per_channel[:, 0].mean()),
        pcc=float(defined.mean()) if defined.size else float("nan"),
        euclidean=float(per_channel[:, 2].mean()),
        js_divergence=float(per_channel[:, 3].mean()),
        per_channel=per_channel,
        warnings=tuple(warns))


def _luminance(img: RgbImage) -> np.ndarray:
    p = img.pixels.astype(np.float64)
    return p[:, :, 0] * LUMA_WEIGHTS[0] + p[:, :, 1] * LUMA_WEIGHTS[1] \
        + p[:, :, 2] * LUMA_WEIGHTS[2]


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _window_mean(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Toroidal boundaries keep the score invariant under equal translation
    # with wrap of both inputs.
    out = correlate1d(x, kernel, axis=0, mode="wrap")
    return correlate1d(out, kernel, axis=1, mode="wrap")


def ssim(a: RgbImage, b: RgbImage, params: SsimParams | None = None) -> float:
    """Mean structural similarity over luminance with Gaussian weighting."""
    params = params or SsimParams()
    if a.width != b.width or a.height != b.height:
        raise DimensionMismatchError(
            f"{a.width}x{a.height} vs {b.width}x{b.height}")
    if min(a.width, a.height) < params.window_size:
        raise DimensionMismatchError(
            f"images must be at least {params.window_size} pixels per side")
    xa, xb = _luminance(a), _luminance(b)
    kernel = _gaussian_kernel(params.window_size, params.sigma)
    mu_a = _window_mean(xa, kernel)
    mu_b = _window_mean(xb, kernel)
    var_a = _window_mean(xa * xa, kernel) - mu_a * mu_a
    var_b = _window_mean(xb * xb, kernel) - mu_b * mu_b
    cov = _window_mean(xa * xb, kernel) - mu_a * mu_b
    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def evaluate_pair(normalized: RgbImage, reference: RgbImage,
                  original: RgbImage, bins: int = cs.DEFAULT_BIN_COUNT,
                  image_id: str = "", reference_histograms=None,
                  ssim_params: SsimParams | None = None) -> MetricReport:
    """Full per-image record: lαβ histogram metrics against the reference,
    SSIM against the original, and the red/blue ratio of the normalized
    image. Pass precomputed reference_histograms when scoring a batch."""
    if reference_histograms is None:
        reference_histograms = cs.channel_histograms(cs.rgb_to_lab(reference), bins)
    src_hists = cs.channel_histograms(cs.rgb_to_lab(normalized), bins)
    return MetricReport(
        image_id=image_id,
        histogram_metrics=histogram_metrics(src_hists, reference_histograms),
        ssim=ssim(normalized, original, ssim_params),
        red_blue_ratio=cs.red_blue_ratio(normalized))


def report_csv_header() -> str:
    return ",".join(REPORT_COLUMNS)


def report_csv_row(report: MetricReport, method: str) -> str:
    """Fixed column order, period decimal separator, 6 places."""
    h = report.histogram_metrics
    values = (h.intersection, h.pcc, h.euclidean, h.js_divergence,
              report.ssim, report.red_blue_ratio)
    return ",".join([report.image_id, method] + [f"{v:.6f}" for v in values])

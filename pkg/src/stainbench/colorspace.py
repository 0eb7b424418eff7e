"""Color-space conversions, channel statistics, and histograms.

Two float working spaces are used:

* lαβ: RGB is scaled to [0, 1] (clamped at 1/255 so the log is finite),
  mapped through the LMS cone-response matrix, converted to absorbance
  logs (-log10), and decorrelated with the fixed orthogonal opponent
  transform. Larger l means darker; α is the blue-yellow axis and β the
  green-red axis, each near 0 for achromatic pixels.
* optical density: OD_c = -log10(max(v, 1) / I0) per channel, so stain
  absorbances combine linearly and OD(background) is exactly 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import WrongSpaceError
from .raster import RgbImage

RGB_TO_LMS = np.array([
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
])
LMS_TO_RGB = np.linalg.inv(RGB_TO_LMS)

_S3, _S6, _S2 = math.sqrt(3.0), math.sqrt(6.0), math.sqrt(2.0)
LOGLMS_TO_LAB = np.array([
    [1.0 / _S3, 1.0 / _S3, 1.0 / _S3],
    [1.0 / _S6, 1.0 / _S6, -2.0 / _S6],
    [1.0 / _S2, -1.0 / _S2, 0.0],
])
LAB_TO_LOGLMS = np.linalg.inv(LOGLMS_TO_LAB)

DEFAULT_BIN_COUNT = 256
RGB_RANGES = ((0.0, 255.0), (0.0, 255.0), (0.0, 255.0))
# Fixed so histograms from different images are directly comparable.
LAB_RANGES = ((0.0, 2.41), (-0.30, 0.30), (-0.25, 0.25))


class ColorSpace(enum.Enum):
    LAB = "lab"
    OD = "od"


@dataclass(frozen=True, eq=False)
class PlanarImage:
    """Three float planes, shape (3, height, width), tagged with a space."""

    planes: np.ndarray
    space: ColorSpace

    def __post_init__(self):
        p = self.planes
        if not isinstance(p, np.ndarray) or p.ndim != 3 or p.shape[0] != 3:
            raise ValueError("planes must be a (3, h, w) array")
        if p.shape[1] < 1 or p.shape[2] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.isfinite(p).all():
            raise ValueError("planes contain non-finite samples")
        out = np.ascontiguousarray(p, dtype=np.float64)
        if out is p and p.flags.writeable:
            out = p.copy()
        out.flags.writeable = False
        object.__setattr__(self, "planes", out)

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def height(self) -> int:
        return self.planes.shape[1]


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and population standard deviation."""

    mean: tuple
    std: tuple


@dataclass(frozen=True, eq=False)
class Histogram:
    """Normalized histogram over [lo, hi]; out-of-range values clamp into
    the end bins, so the weights always sum to 1."""

    bin_count: int
    lo: float
    hi: float
    weights: np.ndarray

    def __post_init__(self):
        if self.bin_count < 2:
            raise ValueError("bin_count must be at least 2")
        if not self.hi > self.lo:
            raise ValueError("hi must exceed lo")
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.shape != (self.bin_count,):
            raise ValueError("weights length must equal bin_count")
        if (w < 0).any():
            raise ValueError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)


def _rgb_flat01(img: RgbImage) -> np.ndarray:
    return np.maximum(img.pixels.reshape(-1, 3).astype(np.float64), 1.0) / 255.0


def rgb_to_lab(img: RgbImage) -> PlanarImage:
    """RGB to lαβ. Total function: values below 1 clamp to 1 before the log."""
    lms = _rgb_flat01(img) @ RGB_TO_LMS.T
    lab = -np.log10(lms) @ LOGLMS_TO_LAB.T
    planes = lab.T.reshape(3, img.height, img.width)
    return PlanarImage(planes, ColorSpace.LAB)


def lab_to_rgb(img: PlanarImage) -> RgbImage:
    """Exact inverse of :func:`rgb_to_lab`; out-of-gamut values clamp to
    [0, 255] (never wrap) and round half-up."""
    if img.space is not ColorSpace.LAB:
        raise WrongSpaceError(f"expected LAB input, got {img.space.name}")
    lab = img.planes.reshape(3, -1).T
    lms = np.power(10.0, -(lab @ LAB_TO_LOGLMS.T))
    rgb = np.clip(lms @ LMS_TO_RGB.T * 255.0, 0.0, 255.0)
    out = np.floor(rgb + 0.5).astype(np.uint8)
    return RgbImage(out.T.reshape(3, img.height, img.width).transpose(1, 2, 0))


def od_from_values(values: np.ndarray, background_intensity: float = 255.0) -> np.ndarray:
    """Optical density of raw channel values: -log10(max(v, 1) / I0)."""
    if not background_intensity > 0:
        raise ValueError("background_intensity must be positive")
    v = np.maximum(np.asarray(values, dtype=np.float64), 1.0)
    return -np.log10(v / background_intensity)


def rgb_to_od(img: RgbImage, background_intensity: float = 255.0) -> PlanarImage:
    od = od_from_values(img.pixels.reshape(-1, 3), background_intensity)
    return PlanarImage(od.T.reshape(3, img.height, img.width), ColorSpace.OD)


def od_to_rgb(img: PlanarImage, background_intensity: float = 255.0) -> RgbImage:
    """v = I0 * 10^(-OD), clamped to [0, 255] and rounded half-up."""
    if img.space is not ColorSpace.OD:
        raise WrongSpaceError(f"expected OD input, got {img.space.name}")
    if not background_intensity > 0:
        raise ValueError("background_intensity must be positive")
    v = background_intensity * np.power(10.0, -img.planes)
    out = np.floor(np.clip(v, 0.0, 255.0) + 0.5).astype(np.uint8)
    return RgbImage(out.transpose(1, 2, 0))


def _as_planes(img) -> np.ndarray:
    if isinstance(img, RgbImage):
        return img.pixels.astype(np.float64).transpose(2, 0, 1)
    if isinstance(img, PlanarImage):
        return img.planes
    raise TypeError(f"expected RgbImage or PlanarImage, got {type(img).__name__}")


def channel_stats(img) -> ChannelStats:
    """Exact population mean/std per plane."""
    planes = _as_planes(img)
    mean = planes.mean(axis=(1, 2))
    std = planes.std(axis=(1, 2))
    return ChannelStats(mean=tuple(float(m) for m in mean),
                        std=tuple(float(s) for s in std))


def default_ranges(img) -> tuple:
    if isinstance(img, RgbImage):
        return RGB_RANGES
    if isinstance(img, PlanarImage) and img.space is ColorSpace.LAB:
        return LAB_RANGES
    raise ValueError("no default histogram ranges for this image; pass ranges")


def channel_histograms(img, bin_count: int = DEFAULT_BIN_COUNT,
                       ranges=None) -> tuple:
    """Normalized per-channel histograms.

    ranges is a ((lo, hi), (lo, hi), (lo, hi)) triple; defaults are
    [0, 255] per RGB channel and the fixed lαβ ranges for LAB images.
    """
    if bin_count < 2:
        raise ValueError("bin_count must be at least 2")
    if ranges is None:
        ranges = default_ranges(img)
    planes = _as_planes(img)
    out = []
    for plane, (lo, hi) in zip(planes, ranges):
        if not hi > lo:
            raise ValueError(f"invalid range ({lo}, {hi})")
        scaled = (plane.ravel() - lo) * (bin_count / (hi - lo))
        idx = np.clip(np.floor(scaled).astype(np.int64), 0, bin_count - 1)
        counts = np.bincount(idx, minlength=bin_count).astype(np.float64)
        out.append(Histogram(bin_count=int(bin_count), lo=float(lo), hi=float(hi),
                             weights=counts / counts.sum()))
    return tuple(out)


def red_blue_ratio(img: RgbImage) -> float:
    """mean(R) / mean(B); raises ZeroDivisionError when mean(B) is 0."""
    mean_r = float(img.pixels[:, :, 0].mean())
    mean_b = float(img.pixels[:, :, 2].mean())
    if mean_b == 0.0:
        raise ZeroDivisionError("blue channel mean is zero")
    return mean_r / mean_b

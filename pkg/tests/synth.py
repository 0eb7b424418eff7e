"""Synthetic image and stain generators shared by the test modules.

Generators double as oracles: images built as OD = basis @ concentrations
carry their own ground truth.
"""

import numpy as np

from stainbench import ColorSpace, PlanarImage, RgbImage, od_to_rgb

CLASSIC_H = np.array([0.65, 0.70, 0.29])
CLASSIC_E = np.array([0.07, 0.99, 0.11])


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def angle_deg(a, b):
    return float(np.degrees(np.arccos(np.clip(unit(a) @ unit(b), -1.0, 1.0))))


def classic_pair():
    return unit(CLASSIC_H), unit(CLASSIC_E)


def stain_pair(theta_deg):
    """Two unit nonnegative OD directions separated by theta_deg, anchored
    at the classic hematoxylin direction."""
    base = unit(CLASSIC_H)
    other = unit(CLASSIC_E)
    ortho = unit(other - (other @ base) * base)
    th = np.radians(theta_deg)
    second = unit(np.cos(th) * base + np.sin(th) * ortho)
    if (second < -1e-12).any():
        raise ValueError(f"pair at {theta_deg} degrees leaves the nonneg cone")
    return base, second


def od_image_from_concentrations(s1, s2, conc):
    """PlanarImage in OD space from a (h, w, 2) concentration field."""
    h, w, _ = conc.shape
    od = conc.reshape(-1, 2) @ np.stack([s1, s2], axis=1).T
    return PlanarImage(od.T.reshape(3, h, w), ColorSpace.OD)


def uniform_concentrations(rng, h, w, lo=0.05, hi=1.5):
    return rng.uniform(lo, hi, size=(h, w, 2))


def two_stain_image(rng, h=100, w=100, theta_deg=None, lo=0.05, hi=1.5):
    """8-bit RGB image lying (up to quantization) in a two-stain plane.

    Returns (image, s1, s2, concentrations)."""
    if theta_deg is None:
        s1, s2 = classic_pair()
    else:
        s1, s2 = stain_pair(theta_deg)
    conc = uniform_concentrations(rng, h, w, lo, hi)
    img = od_to_rgb(od_image_from_concentrations(s1, s2, conc))
    return img, s1, s2, conc


def tissue_like_image(rng, h=96, w=96, theta_deg=35.0, background_fraction=0.25):
    """Tissue-ish raster: smooth two-stain fields with a white border band."""
    from scipy.ndimage import gaussian_filter

    s1, s2 = stain_pair(theta_deg)
    conc = np.stack([gaussian_filter(rng.uniform(0.0, 1.6, (h, w)), 3.0),
                     gaussian_filter(rng.uniform(0.0, 1.2, (h, w)), 3.0)], axis=2)
    conc = np.clip(conc, 0.0, None)
    band = max(1, int(min(h, w) * background_fraction / 2))
    conc[:band] = 0.0
    conc[-band:] = 0.0
    return od_to_rgb(od_image_from_concentrations(s1, s2, conc))


def random_rgb(rng, h=32, w=32):
    return RgbImage(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))


def constant_rgb(r, g, b, h=8, w=8):
    return RgbImage(np.full((h, w, 3), (r, g, b), dtype=np.uint8))


def tint_image(img, gains):
    """Per-channel linear gain, clamped to 8 bits (monotone tint)."""
    scaled = img.pixels.astype(np.float64) * np.asarray(gains)
    return RgbImage(np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8))

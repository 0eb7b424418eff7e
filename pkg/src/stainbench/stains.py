"""Two-stain basis estimation and per-pixel stain densities.

The stain basis is a 3x2 matrix of unit-norm, nonnegative optical-density
directions, hematoxylin first. Two estimators are provided: a robust
SVD/extreme-angle route and an alternating sparse nonnegative
factorization refined from the SVD estimate. Concentrations solve
OD ≈ basis @ c per pixel under c >= 0, optionally with an L1 penalty.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .colorspace import ColorSpace, PlanarImage, od_to_rgb
from .errors import (DegenerateStainsError, InsufficientTissueError,
                     NonConvergenceWarning, SingularBasisError,
                     WrongSpaceError)
from .raster import RgbImage

MIN_TISSUE_PIXELS = 100
_DEGENERATE_ANGLE_DEG = 1.0


@dataclass(frozen=True, eq=False)
class StainMatrix:
    """Unit-norm nonnegative stain directions, hematoxylin column first.

    Hematoxylin is identified as the column with the larger blue-channel
    component (ties broken by the red channel).
    """

    columns: np.ndarray  # (3, 2)

    def __post_init__(self):
        c = np.ascontiguousarray(self.columns, dtype=np.float64)
        if c.shape != (3, 2):
            raise ValueError("columns must have shape (3, 2)")
        if (c < -1e-12).any():
            raise ValueError("stain components must be nonnegative")
        norms = np.linalg.norm(c, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("stain columns must be unit length")
        if c[2, 0] < c[2, 1] - 1e-6 or (
                abs(c[2, 0] - c[2, 1]) <= 1e-6 and c[0, 0] < c[0, 1] - 1e-6):
            raise ValueError("hematoxylin column must come first")
        c[c < 0] = 0.0
        c.flags.writeable = False
        object.__setattr__(self, "columns", c)

    @property
    def hematoxylin(self) -> np.ndarray:
        return self.columns[:, 0]

    @property
    def eosin(self) -> np.ndarray:
        return self.columns[:, 1]

    def angle_degrees(self) -> float:
        """Angle between the two stain directions."""
        d = float(np.clip(self.columns[:, 0] @ self.columns[:, 1], -1.0, 1.0))
        return float(np.degrees(np.arccos(d)))


def _order_columns(cols: np.ndarray):
    """Return (ordered columns, permutation) with hematoxylin first."""
    if cols[2, 0] < cols[2, 1] - 1e-6 or (
            abs(cols[2, 0] - cols[2, 1]) <= 1e-6 and cols[0, 0] < cols[0, 1]):
        return cols[:, ::-1], (1, 0)
    return cols, (0, 1)


def stain_matrix_from_vectors(a, b) -> StainMatrix:
    """Build an ordered StainMatrix from two raw OD directions.

    Signs are flipped so entries are nonnegative, tiny negatives clamp to
    zero, columns are renormalized and ordered by blue component.
    """
    cols = []
    for v in (a, b):
        v = np.asarray(v, dtype=np.float64).copy()
        if v.sum() < 0:
            v = -v
        v[v < 0] = 0.0
        n = np.linalg.norm(v)
        if n == 0:
            raise DegenerateStainsError("stain direction collapsed to zero")
        cols.append(v / n)
    ordered, _ = _order_columns(np.stack(cols, axis=1))
    return StainMatrix(ordered)


@dataclass(frozen=True, eq=False)
class ConcentrationMap:
    """Nonnegative per-pixel stain densities, shape (2, height, width)."""

    planes: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.planes, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != 2:
            raise ValueError("planes must be a (2, h, w) array")
        if not np.isfinite(p).all():
            raise ValueError("concentrations must be finite")
        if (p < 0).any():
            raise ValueError("concentrations must be nonnegative")
        p.flags.writeable = False
        object.__setattr__(self, "planes", p)

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def height(self) -> int:
        return self.planes.shape[1]


@dataclass(frozen=True)
class MacenkoParams:
    od_threshold: float = 0.15
    angle_percentile: float = 1.0
    concentration_percentile: float = 99.0

    def __post_init__(self):
        if not 0 < self.angle_percentile < 50:
            raise ValueError("angle_percentile must be in (0, 50)")
        if self.od_threshold < 0:
            raise ValueError("od_threshold must be nonnegative")
        if not 50 < self.concentration_percentile <= 100:
            raise ValueError("concentration_percentile must be in (50, 100]")


@dataclass(frozen=True)
class SnmfParams:
    sparsity_lambda: float = 0.1
    max_iterations: int = 100
    tolerance: float = 1e-4
    seed: int = 0  # reserved; the solver is deterministic from its init

    def __post_init__(self):
        if self.sparsity_lambda < 0:
            raise ValueError("sparsity_lambda must be nonnegative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


def _require_od(od: PlanarImage) -> None:
    if od.space is not ColorSpace.OD:
        raise WrongSpaceError(f"expected OD input, got {od.space.name}")


def foreground_od_pixels(od: PlanarImage, threshold: float) -> np.ndarray:
    """(N, 3) OD samples of pixels with any channel at or above threshold."""
    _require_od(od)
    flat = od.planes.reshape(3, -1).T
    return flat[(flat >= threshold).any(axis=1)]


def _macenko_from_pixels(pixels: np.ndarray, params: MacenkoParams) -> StainMatrix:
    if pixels.shape[0] < MIN_TISSUE_PIXELS:
        raise InsufficientTissueError(
            f"{pixels.shape[0]} foreground pixels, need {MIN_TISSUE_PIXELS}")
    # Top-2 right-singular plane via the 3x3 second-moment matrix.
    gram = pixels.T @ pixels
    _, vecs = np.linalg.eigh(gram)
    v1, v2 = vecs[:, 2], vecs[:, 1]
    if float(np.mean(pixels @ v1)) < 0:
        v1 = -v1
    if v2[np.argmax(np.abs(v2))] < 0:
        v2 = -v2
    phi = np.arctan2(pixels @ v2, pixels @ v1)
    lo = np.percentile(phi, params.angle_percentile)
    hi = np.percentile(phi, 100.0 - params.angle_percentile)
    u_lo = np.cos(lo) * v1 + np.sin(lo) * v2
    u_hi = np.cos(hi) * v1 + np.sin(hi) * v2
    stains = stain_matrix_from_vectors(u_lo, u_hi)
    if stains.angle_degrees() < _DEGENERATE_ANGLE_DEG:
        raise DegenerateStainsError(
            f"extreme directions only {stains.angle_degrees():.3f} degrees apart")
    return stains


def estimate_stains_macenko(od: PlanarImage,
                            params: MacenkoParams | None = None) -> StainMatrix:
    """Robust SVD route: drop background, project foreground OD onto the
    top-2 singular plane, and take the percentile-extreme angle directions
    as the stain vectors."""
    params = params or MacenkoParams()
    return _macenko_from_pixels(foreground_od_pixels(od, params.od_threshold), params)


def _solve_concentrations(od_flat: np.ndarray, cols: np.ndarray,
                          lam: float) -> np.ndarray:
    """Exact per-pixel minimizer of ||od - cols @ c||^2 + lam * (c1 + c2),
    c >= 0. cols is (3, 2) with non-parallel columns; od_flat is (N, 3)."""
    sts = cols.T @ cols
    det = sts[0, 0] * sts[1, 1] - sts[0, 1] * sts[1, 0]
    if det <= 1e-12:
        raise SingularBasisError("stain columns are parallel")
    rhs = od_flat @ cols - lam / 2.0  # (N, 2)
    inv = np.array([[sts[1, 1], -sts[0, 1]], [-sts[1, 0], sts[0, 0]]]) / det
    c = rhs @ inv.T
    bad = (c[:, 0] < 0) | (c[:, 1] < 0)
    if bad.any():
        r = rhs[bad]
        c1 = np.clip(r[:, 0] / sts[0, 0], 0.0, None)
        c2 = np.clip(r[:, 1] / sts[1, 1], 0.0, None)
        # Objective along each axis, dropping the shared ||od||^2 term.
        f1 = sts[0, 0] * c1 * c1 - 2.0 * r[:, 0] * c1 + lam * c1
        f2 = sts[1, 1] * c2 * c2 - 2.0 * r[:, 1] * c2 + lam * c2
        pick1 = f1 <= f2
        fixed = np.zeros_like(r)
        fixed[pick1, 0] = c1[pick1]
        fixed[~pick1, 1] = c2[~pick1]
        c[bad] = fixed
    np.clip(c, 0.0, None, out=c)
    return c


def compute_concentrations(od: PlanarImage, stains: StainMatrix,
                           solver: str = "nnls",
                           sparsity_lambda: float = 0.1) -> ConcentrationMap:
    """Per-pixel stain densities under OD ≈ stains @ c with c >= 0.

    solver "nnls" is the plain constrained least squares; "sparse" adds the
    L1 penalty sparsity_lambda * (c1 + c2) used by the factorization route.
    """
    _require_od(od)
    if solver not in ("nnls", "sparse"):
        raise ValueError(f"unknown solver {solver!r}")
    lam = sparsity_lambda if solver == "sparse" else 0.0
    flat = od.planes.reshape(3, -1).T
    c = _solve_concentrations(flat, stains.columns, lam)
    return ConcentrationMap(c.T.reshape(2, od.height, od.width))


@dataclass(frozen=True, eq=False)
class SnmfResult:
    stains: StainMatrix
    concentrations: np.ndarray  # (N, 2), aligned with the input samples
    objective: np.ndarray  # per-iteration value, non-increasing
    converged: bool


def snmf_factorize(od_pixels: np.ndarray, params: SnmfParams | None = None,
                   init: StainMatrix | None = None) -> SnmfResult:
    """Alternating minimization of ||V - H W^T||_F^2 + lam * sum(H) with
    W, H >= 0 and unit-norm W columns.

    Each half-step is an exact minimizer (closed-form sparse coding per
    pixel; per-column projection onto the nonnegative unit sphere), so the
    objective never increases. Initialized from the SVD estimate when no
    init is given; stops on the relative-change tolerance or the iteration
    cap, warning (never raising) on the latter.
    """
    params = params or SnmfParams()
    v = np.ascontiguousarray(od_pixels, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 3:
        raise ValueError("od_pixels must be an (N, 3) array")
    if v.shape[0] < MIN_TISSUE_PIXELS:
        raise InsufficientTissueError(
            f"{v.shape[0]} samples, need {MIN_TISSUE_PIXELS}")
    w = (init or _macenko_from_pixels(v, MacenkoParams())).columns.copy()
    lam = params.sparsity_lambda
    objective = []
    h = np.zeros((v.shape[0], 2))
    converged = False
    for _ in range(params.max_iterations):
        h = _solve_concentrations(v, w, lam)
        for j in (0, 1):
            k = 1 - j
            b = v.T @ h[:, j] - w[:, k] * float(h[:, k] @ h[:, j])
            np.clip(b, 0.0, None, out=b)
            norm = np.linalg.norm(b)
            if norm > 0:
                w[:, j] = b / norm
        resid = v - h @ w.T
        obj = float(np.einsum("ij,ij->", resid, resid)) + lam * float(h.sum())
        objective.append(obj)
        if len(objective) > 1:
            prev = objective[-2]
            if prev - obj <= params.tolerance * max(prev, 1e-12):
                converged = True
                break
    if not converged:
        warnings.warn("factorization hit the iteration cap; returning best iterate",
                      NonConvergenceWarning, stacklevel=2)
    ordered, perm = _order_columns(w)
    return SnmfResult(stains=StainMatrix(ordered.copy()),
                      concentrations=h[:, perm],
                      objective=np.asarray(objective),
                      converged=converged)


def estimate_stains_vahadane(od: PlanarImage, params: SnmfParams | None = None,
                             od_threshold: float = 0.15) -> StainMatrix:
    """Foreground masking as in the SVD route, then the sparse
    factorization; returns the ordered unit-norm basis."""
    pixels = foreground_od_pixels(od, od_threshold)
    if pixels.shape[0] < MIN_TISSUE_PIXELS:
        raise InsufficientTissueError(
            f"{pixels.shape[0]} foreground pixels, need {MIN_TISSUE_PIXELS}")
    return snmf_factorize(pixels, params).stains


def reconstruct_rgb(stains: StainMatrix, conc: ConcentrationMap,
                    background_intensity: float = 255.0) -> RgbImage:
    """OD = stains @ c per pixel, then back to RGB against I0."""
    flat = conc.planes.reshape(2, -1)
    od = (stains.columns @ flat).reshape(3, conc.height, conc.width)
    return od_to_rgb(PlanarImage(od, ColorSpace.OD), background_intensity)


def stain_matrix_to_json(stains: StainMatrix) -> list:
    """Column-major 6-number list (hematoxylin column first)."""
    return [float(x) for x in stains.columns.T.ravel()]


def stain_matrix_from_json(values) -> StainMatrix:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.shape != (6,):
        raise ValueError("expected exactly 6 numbers")
    return StainMatrix(arr.reshape(2, 3).T)

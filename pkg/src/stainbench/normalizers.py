"""Uniform fit(reference) / transform(source) over the four normalizers.

A fitted model is immutable and holds only reference-side state, so one
model can serve many concurrent transforms. Every method fits on the whole
reference image and transforms whole source images; per-pixel application
can optionally be chunked through the tile machinery purely to bound
memory, with bit-identical results.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import colorspace as cs
from .colorspace import ChannelStats, PlanarImage
from .raster import RgbImage, stitch_tiles, tile_image
from .stains import (MacenkoParams, SnmfParams, StainMatrix,
                     compute_concentrations, estimate_stains_macenko,
                     estimate_stains_vahadane, stain_matrix_from_json,
                     stain_matrix_to_json)

LEVELS = 256


class Method(str, enum.Enum):
    HISTMATCH = "histmatch"
    REINHARD = "reinhard"
    MACENKO = "macenko"
    VAHADANE = "vahadane"


@dataclass(frozen=True, eq=False)
class HistMatchState:
    """Right-continuous reference CDF per RGB channel, 256 levels each."""

    cdfs: np.ndarray  # (3, 256)


@dataclass(frozen=True)
class ReinhardState:
    """Reference channel statistics in lαβ."""

    stats: ChannelStats


@dataclass(frozen=True, eq=False)
class StainState:
    """Reference stain basis plus robust per-stain density scales."""

    stains: StainMatrix
    scales: tuple  # (hematoxylin, eosin) percentile concentrations
    solver: str = "nnls"
    sparsity_lambda: float = 0.1
    concentration_percentile: float = 99.0


@dataclass(frozen=True)
class NormalizerModel:
    method: Method
    state: object

    def __post_init__(self):
        expected = {Method.HISTMATCH: HistMatchState,
                    Method.REINHARD: ReinhardState,
                    Method.MACENKO: StainState,
                    Method.VAHADANE: StainState}[self.method]
        if not isinstance(self.state, expected):
            raise ValueError(f"{self.method.value} model needs {expected.__name__}")


@dataclass(frozen=True)
class NormalizationOutcome:
    image: RgbImage
    warnings: tuple = ()


@dataclass(frozen=True)
class BatchResult:
    """Per-source outcomes in input order; failed slots are None with the
    failure recorded as (index, exception)."""

    results: tuple
    errors: tuple

    @property
    def outcomes(self) -> list:
        return [r for r in self.results if r is not None]


def _rgb_cdfs(img: RgbImage) -> np.ndarray:
    flat = img.pixels.reshape(-1, 3)
    cdfs = np.empty((3, LEVELS))
    for ch in range(3):
        counts = np.bincount(flat[:, ch], minlength=LEVELS).astype(np.float64)
        cdfs[ch] = np.cumsum(counts) / counts.sum()
    return cdfs


def fit(method: Method, reference: RgbImage, *,
        macenko_params: MacenkoParams | None = None,
        snmf_params: SnmfParams | None = None,
        vahadane_solver: str = "nnls") -> NormalizerModel:
    """Fit the per-method reference state on the whole reference image."""
    method = Method(method)
    if method is Method.HISTMATCH:
        return NormalizerModel(method, HistMatchState(cdfs=_rgb_cdfs(reference)))
    if method is Method.REINHARD:
        return NormalizerModel(
            method, ReinhardState(stats=cs.channel_stats(cs.rgb_to_lab(reference))))
    mp = macenko_params or MacenkoParams()
    od = cs.rgb_to_od(reference)
    if method is Method.MACENKO:
        stains = estimate_stains_macenko(od, mp)
        solver, lam = "nnls", 0.0
    else:
        sp = snmf_params or SnmfParams()
        stains = estimate_stains_vahadane(od, sp, od_threshold=mp.od_threshold)
        solver, lam = vahadane_solver, sp.sparsity_lambda
    conc = compute_concentrations(od, stains, solver=solver, sparsity_lambda=lam)
    scales = tuple(float(np.percentile(plane, mp.concentration_percentile))
                   for plane in conc.planes)
    return NormalizerModel(method, StainState(
        stains=stains, scales=scales, solver=solver, sparsity_lambda=lam,
        concentration_percentile=mp.concentration_percentile))


_LAB_CHANNEL_NAMES = ("l", "alpha", "beta")


def _degenerate_channel_warnings(src_stats: ChannelStats) -> tuple:
    return tuple(f"channel {_LAB_CHANNEL_NAMES[i]}: zero variance in source, "
                 "pinned to reference mean"
                 for i in range(3) if src_stats.std[i] == 0.0)


def reinhard_match_stats(lab: PlanarImage, src_stats: ChannelStats,
                         ref_stats: ChannelStats):
    """Per-channel moment matching in lαβ: x' = (x - mu_src) * (sigma_ref /
    sigma_src) + mu_ref. A zero-variance source channel is pinned to the
    reference mean and reported in the returned warnings."""
    planes = np.empty_like(lab.planes)
    for i in range(3):
        if src_stats.std[i] == 0.0:
            planes[i] = ref_stats.mean[i]
        else:
            gain = ref_stats.std[i] / src_stats.std[i]
            planes[i] = (lab.planes[i] - src_stats.mean[i]) * gain + ref_stats.mean[i]
    return PlanarImage(planes, cs.ColorSpace.LAB), _degenerate_channel_warnings(src_stats)


def _histmatch_lut(src_cdfs: np.ndarray, ref_cdfs: np.ndarray) -> np.ndarray:
    """Monotone quantile-mapping lookup: each source level maps to the
    smallest reference level whose CDF reaches the source quantile."""
    lut = np.empty((3, LEVELS), dtype=np.uint8)
    for ch in range(3):
        idx = np.searchsorted(ref_cdfs[ch], src_cdfs[ch], side="left")
        lut[ch] = np.clip(idx, 0, LEVELS - 1).astype(np.uint8)
    return lut


def _apply_chunked(source: RgbImage, tile_size, fn) -> RgbImage:
    if tile_size is None or (source.width <= tile_size and source.height <= tile_size):
        return fn(source)
    grid = tile_image(source, tile_size)
    done = tuple((r, c, fn(tile)) for r, c, tile in grid.tiles)
    return stitch_tiles(type(grid)(grid.tile_size, done, grid.source_dims))


def transform(model: NormalizerModel, source: RgbImage,
              tile_size: int | None = None) -> NormalizationOutcome:
    """Normalize a whole source image against the fitted reference state.

    Source-side statistics are always computed globally; tile_size only
    chunks the final per-pixel application (same output either way).
    """
    warns: tuple = ()
    if model.method is Method.HISTMATCH:
        lut = _histmatch_lut(_rgb_cdfs(source), model.state.cdfs)

        def apply(img: RgbImage) -> RgbImage:
            out = np.empty_like(img.pixels)
            for ch in range(3):
                out[:, :, ch] = lut[ch][img.pixels[:, :, ch]]
            return RgbImage(out)

    elif model.method is Method.REINHARD:
        src_stats = cs.channel_stats(cs.rgb_to_lab(source))
        ref_stats = model.state.stats
        warns = _degenerate_channel_warnings(src_stats)

        def apply(img: RgbImage) -> RgbImage:
            matched, _ = reinhard_match_stats(cs.rgb_to_lab(img),
                                              src_stats, ref_stats)
            return cs.lab_to_rgb(matched)

    else:
        state = model.state
        od = cs.rgb_to_od(source)
        if model.method is Method.MACENKO:
            src_stains = estimate_stains_macenko(od)
        else:
            src_stains = estimate_stains_vahadane(
                od, SnmfParams(sparsity_lambda=state.sparsity_lambda))
        src_conc = compute_concentrations(od, src_stains, solver=state.solver,
                                          sparsity_lambda=state.sparsity_lambda)
        factors = []
        wlist = []
        for i, name in enumerate(("hematoxylin", "eosin")):
            src_scale = float(np.percentile(src_conc.planes[i],
                                            state.concentration_percentile))
            if src_scale <= 1e-12:
                wlist.append(f"{name}: source density scale is zero, left unscaled")
                factors.append(1.0)
            else:
                factors.append(state.scales[i] / src_scale)
        warns = tuple(wlist)
        gains = np.asarray(factors).reshape(2, 1)
        ref_cols = state.stains.columns

        def apply(img: RgbImage) -> RgbImage:
            tile_od = cs.rgb_to_od(img)
            conc = compute_concentrations(tile_od, src_stains, solver=state.solver,
                                          sparsity_lambda=state.sparsity_lambda)
            flat = conc.planes.reshape(2, -1) * gains
            od_flat = (ref_cols @ flat).reshape(3, img.height, img.width)
            return cs.od_to_rgb(PlanarImage(od_flat, cs.ColorSpace.OD))

    return NormalizationOutcome(image=_apply_chunked(source, tile_size, apply),
                                warnings=warns)


def fit_transform(method: Method, reference: RgbImage, sources, *,
                  tile_size: int | None = None,
                  macenko_params: MacenkoParams | None = None,
                  snmf_params: SnmfParams | None = None,
                  vahadane_solver: str = "nnls") -> BatchResult:
    """One shared fit, then transform each source; per-source failures are
    collected and the batch continues."""
    model = fit(method, reference, macenko_params=macenko_params,
                snmf_params=snmf_params, vahadane_solver=vahadane_solver)
    results = []
    errors = []
    for i, src in enumerate(sources):
        try:
            results.append(transform(model, src, tile_size=tile_size))
        except Exception as exc:  # noqa: BLE001 - partial-failure contract
            results.append(None)
            errors.append((i, exc))
    return BatchResult(results=tuple(results), errors=tuple(errors))


def model_to_json(model: NormalizerModel) -> dict:
    """JSON-serializable form for fit-once / apply-many workflows."""
    if model.method is Method.HISTMATCH:
        payload = {"cdfs": model.state.cdfs.tolist()}
    elif model.method is Method.REINHARD:
        payload = {"mean": list(model.state.stats.mean),
                   "std": list(model.state.stats.std)}
    else:
        payload = {"stains": stain_matrix_to_json(model.state.stains),
                   "scales": list(model.state.scales),
                   "solver": model.state.solver,
                   "sparsity_lambda": model.state.sparsity_lambda,
                   "concentration_percentile": model.state.concentration_percentile}
    return {"method": model.method.value, "payload": payload}


def model_from_json(doc: dict) -> NormalizerModel:
    method = Method(doc["method"])
    payload = doc["payload"]
    if method is Method.HISTMATCH:
        state = HistMatchState(cdfs=np.asarray(payload["cdfs"], dtype=np.float64))
    elif method is Method.REINHARD:
        state = ReinhardState(stats=ChannelStats(mean=tuple(payload["mean"]),
                                                 std=tuple(payload["std"])))
    else:
        state = StainState(
            stains=stain_matrix_from_json(payload["stains"]),
            scales=tuple(payload["scales"]),
            solver=payload["solver"],
            sparsity_lambda=payload["sparsity_lambda"],
            concentration_percentile=payload["concentration_percentile"])
    return NormalizerModel(method, state)

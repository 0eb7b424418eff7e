"""Whole-image stain normalization toolkit and evaluation harness for
H&E histopathology rasters."""

from ._version import __version__
from .cohort import (ClusterModel, FeatureVector, PcaModel,
                     choose_representatives, histogram_features,
                     kmeans_cluster, pca_fit_project, select_reference,
                     wcss_curve)
from .colorspace import (ChannelStats, ColorSpace, Histogram, PlanarImage,
                         channel_histograms, channel_stats, lab_to_rgb,
                         od_to_rgb, red_blue_ratio, rgb_to_lab, rgb_to_od)
from .metrics import (HistogramMetricSet, MetricReport, SsimParams,
                      evaluate_pair, histogram_metrics, ssim)
from .normalizers import (BatchResult, Method, NormalizationOutcome,
                          NormalizerModel, fit, fit_transform,
                          model_from_json, model_to_json, transform)
from .raster import (ResolutionMeta, RgbImage, TileGrid, downsample,
                     load_image, save_image, stitch_tiles, tile_image)
from .stains import (ConcentrationMap, MacenkoParams, SnmfParams, SnmfResult,
                     StainMatrix, compute_concentrations,
                     estimate_stains_macenko, estimate_stains_vahadane,
                     reconstruct_rgb, snmf_factorize, stain_matrix_from_json,
                     stain_matrix_to_json)

__all__ = [name for name in dir() if not name.startswith("_")]

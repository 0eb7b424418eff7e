"""Batch command-line front end.

Commands: normalize, evaluate, select-reference, cluster, version.
Configuration comes from flags or a JSON file (flags override file
values). Per-image failures are recorded and the batch continues; exit
code 0 means no per-image errors, 1 means some occurred, 2 means the
configuration was invalid and nothing was processed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import cohort, colorspace, metrics, normalizers, raster
from ._version import __version__
from .errors import ConfigError, KTooLargeError, MissingCounterpartError
from .normalizers import Method
from .stains import SnmfParams

IMAGE_SUFFIXES = (".png", ".tif", ".tiff")


@dataclass
class RunConfig:
    method: str | None = None
    reference: str | None = None
    input: str | None = None
    output: str | None = None
    normalized: str | None = None
    bins: int = 256
    tile_size: int = 512
    downsample: int = 1
    seed: int = 0
    workers: int = 1
    clusters: int = cohort.DEFAULT_CLUSTER_COUNT
    vahadane_solver: str = "nnls"
    sparsity_lambda: float = 0.1
    skip_ssim: bool = False
    skip_histogram: bool = False

    def validate_common(self) -> None:
        if self.bins < 2:
            raise ConfigError("bins must be at least 2")
        if self.tile_size < 1:
            raise ConfigError("tile-size must be positive")
        if self.downsample < 1:
            raise ConfigError("downsample must be a positive integer")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.vahadane_solver not in ("nnls", "sparse"):
            raise ConfigError(f"unknown vahadane solver {self.vahadane_solver!r}")
        if self.sparsity_lambda < 0:
            raise ConfigError("sparsity-lambda must be nonnegative")


def _build_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        unknown = set(loaded) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for f in fields(RunConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            values[f.name] = flag_value
    cfg = RunConfig(**values)
    cfg.validate_common()
    return cfg


def _list_images(directory: Path) -> list:
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _load(path: Path, downsample_factor: int) -> raster.RgbImage:
    img = raster.load_image(path)
    if downsample_factor > 1:
        img = raster.downsample(img, downsample_factor)
    return img


def _run_indexed(worker, items, workers: int) -> list:
    """Run worker over items, preserving input order in the result list."""
    if workers <= 1 or len(items) <= 1:
        return [worker(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, items))


def _write_manifest(cfg: RunConfig, command: str, out_dir: Path,
                    image_entries, timings: dict) -> None:
    manifest = {
        "command": command,
        "config": asdict(cfg),
        "images": sorted(image_entries, key=lambda e: e["image"]),
        "timings_seconds": {k: round(v, 6) for k, v in timings.items()},
        "tool_version": __version__,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _require_dir(value, name: str) -> Path:
    if not value:
        raise ConfigError(f"--{name} is required")
    path = Path(value)
    if not path.is_dir():
        raise ConfigError(f"--{name}: not a directory: {path}")
    return path


def _prepare_output(cfg: RunConfig) -> Path:
    if not cfg.output:
        raise ConfigError("--output is required")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_normalize(cfg: RunConfig) -> int:
    if not cfg.method:
        raise ConfigError("--method is required")
    try:
        method = Method(cfg.method)
    except ValueError:
        raise ConfigError(f"unknown method {cfg.method!r}") from None
    if not cfg.reference:
        raise ConfigError("--reference is required")
    in_dir = _require_dir(cfg.input, "input")
    inputs = _list_images(in_dir)
    if not inputs:
        raise ConfigError(f"no images in {in_dir}")
    out_dir = _prepare_output(cfg)

    t0 = time.perf_counter()
    try:
        reference = _load(Path(cfg.reference), cfg.downsample)
        model = normalizers.fit(
            method, reference,
            snmf_params=SnmfParams(sparsity_lambda=cfg.sparsity_lambda,
                                   seed=cfg.seed),
            vahadane_solver=cfg.vahadane_solver)
    except Exception as exc:  # bad reference aborts before processing
        raise ConfigError(f"cannot fit on reference: {exc}") from exc
    fit_seconds = time.perf_counter() - t0

    def worker(path: Path) -> dict:
        name = path.name
        try:
            outcome = normalizers.transform(model, _load(path, cfg.downsample),
                                            tile_size=cfg.tile_size)
            raster.save_image(outcome.image, out_dir / (path.stem + ".png"))
        except Exception as exc:  # noqa: BLE001 - per-image isolation
            return {"image": name, "status": "error", "message": str(exc)}
        if outcome.warnings:
            return {"image": name, "status": "warning",
                    "message": "; ".join(outcome.warnings)}
        return {"image": name, "status": "ok", "message": ""}

    t1 = time.perf_counter()
    entries = _run_indexed(worker, inputs, cfg.workers)
    _write_manifest(cfg, "normalize", out_dir, entries,
                    {"fit": fit_seconds, "process": time.perf_counter() - t1})
    failures = [e for e in entries if e["status"] == "error"]
    for e in failures:
        print(f"error: {e['image']}: {e['message']}", file=sys.stderr)
    return 1 if failures else 0


def _find_counterpart(original_dir: Path, stem: str) -> Path:
    for suffix in IMAGE_SUFFIXES:
        for candidate in (original_dir / f"{stem}{suffix}",
                          original_dir / f"{stem}{suffix.upper()}"):
            if candidate.exists():
                return candidate
    raise MissingCounterpartError(f"no original found for {stem!r}")


def _summary_rows(rows: list, method_label: str) -> list:
    table = np.array([[r[c] for c in metrics.REPORT_COLUMNS[2:]] for r in rows],
                     dtype=np.float64)
    out = []
    with np.errstate(invalid="ignore"):
        for label, vec in (("mean", np.nanmean(table, axis=0)),
                           ("std", np.nanstd(table, axis=0))):
            out.append(",".join([label, method_label]
                                + [f"{v:.6f}" for v in vec]))
    return out


def cmd_evaluate(cfg: RunConfig) -> int:
    if not cfg.reference:
        raise ConfigError("--reference is required")
    norm_dir = _require_dir(cfg.normalized, "normalized")
    orig_dir = _require_dir(cfg.input, "input")
    out_dir = _prepare_output(cfg)
    method_label = cfg.method or "unspecified"

    t0 = time.perf_counter()
    try:
        reference = _load(Path(cfg.reference), cfg.downsample)
    except Exception as exc:
        raise ConfigError(f"cannot load reference: {exc}") from exc
    ref_hists = None
    if not cfg.skip_histogram:
        ref_hists = colorspace.channel_histograms(
            colorspace.rgb_to_lab(reference), cfg.bins)
    fit_seconds = time.perf_counter() - t0

    normalized_files = _list_images(norm_dir)
    if not normalized_files:
        print("warning: no normalized images to evaluate", file=sys.stderr)
        (out_dir / "metrics.csv").write_text(metrics.report_csv_header() + "\n")
        _write_manifest(cfg, "evaluate", out_dir, [], {"reference": fit_seconds})
        return 0

    def worker(path: Path):
        name = path.name
        try:
            normalized = _load(path, 1)
            original = _load(_find_counterpart(orig_dir, path.stem),
                             cfg.downsample)
            row = {"image_id": path.stem}
            if cfg.skip_histogram:
                row.update(intersection=float("nan"), pcc=float("nan"),
                           euclidean=float("nan"), js_divergence=float("nan"))
            else:
                h = metrics.histogram_metrics(
                    colorspace.channel_histograms(
                        colorspace.rgb_to_lab(normalized), cfg.bins),
                    ref_hists)
                row.update(intersection=h.intersection, pcc=h.pcc,
                           euclidean=h.euclidean, js_divergence=h.js_divergence)
            row["ssim"] = (float("nan") if cfg.skip_ssim
                           else metrics.ssim(normalized, original))
            row["red_blue_ratio"] = colorspace.red_blue_ratio(normalized)
        except Exception as exc:  # noqa: BLE001 - per-image isolation
            return None, {"image": name, "status": "error", "message": str(exc)}
        return row, {"image": name, "status": "ok", "message": ""}

    t1 = time.perf_counter()
    results = _run_indexed(worker, normalized_files, cfg.workers)
    rows = [r for r, _ in results if r is not None]
    entries = [e for _, e in results]
    lines = [metrics.report_csv_header()]
    for row in rows:
        lines.append(",".join(
            [row["image_id"], method_label]
            + [f"{row[c]:.6f}" for c in metrics.REPORT_COLUMNS[2:]]))
    if rows:
        lines.extend(_summary_rows(rows, method_label))
    (out_dir / "metrics.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(cfg, "evaluate", out_dir, entries,
                    {"reference": fit_seconds,
                     "evaluate": time.perf_counter() - t1})
    failures = [e for e in entries if e["status"] == "error"]
    for e in failures:
        print(f"error: {e['image']}: {e['message']}", file=sys.stderr)
    return 1 if failures else 0


def cmd_select_reference(cfg: RunConfig) -> int:
    in_dir = _require_dir(cfg.input, "input")
    files = _list_images(in_dir)
    if not files:
        raise ConfigError(f"no images in {in_dir}")
    out_dir = _prepare_output(cfg)

    def worker(path: Path):
        try:
            ratio = colorspace.red_blue_ratio(_load(path, cfg.downsample))
            return (path.stem, ratio), {"image": path.name, "status": "ok",
                                        "message": ""}
        except Exception as exc:  # noqa: BLE001 - per-image isolation
            return None, {"image": path.name, "status": "error",
                          "message": str(exc)}

    t0 = time.perf_counter()
    results = _run_indexed(worker, files, cfg.workers)
    ratios = [r for r, _ in results if r is not None]
    entries = [e for _, e in results]
    if not ratios:
        raise ConfigError("no decodable images in the cohort")
    lines = ["image_id,red_blue_ratio"]
    lines += [f"{image_id},{ratio:.6f}" for image_id, ratio in ratios]
    (out_dir / "ratios.csv").write_text("\n".join(lines) + "\n")
    winner = cohort.select_reference(ratios)
    _write_manifest(cfg, "select-reference", out_dir, entries,
                    {"process": time.perf_counter() - t0})
    print(winner)
    failures = [e for e in entries if e["status"] == "error"]
    for e in failures:
        print(f"error: {e['image']}: {e['message']}", file=sys.stderr)
    return 1 if failures else 0


def cmd_cluster(cfg: RunConfig) -> int:
    in_dir = _require_dir(cfg.input, "input")
    files = _list_images(in_dir)
    if not files:
        raise ConfigError(f"no images in {in_dir}")
    if cfg.clusters < 1:
        raise ConfigError("clusters must be at least 1")
    out_dir = _prepare_output(cfg)

    def worker(path: Path):
        try:
            feat = cohort.histogram_features(_load(path, cfg.downsample),
                                             cfg.bins, image_id=path.stem)
            return feat, {"image": path.name, "status": "ok", "message": ""}
        except Exception as exc:  # noqa: BLE001
            return None, {"image": path.name, "status": "error",
                          "message": str(exc)}

    t0 = time.perf_counter()
    results = _run_indexed(worker, files, cfg.workers)
    feats = [f for f, _ in results if f is not None]
    entries = [e for _, e in results]
    if len(feats) < cfg.clusters:
        raise ConfigError(
            f"k={cfg.clusters} exceeds the {len(feats)} decodable images")
    ids = [f.image_id for f in feats]
    try:
        _, projected = cohort.pca_fit_project(feats, n_components=2)
        model = cohort.kmeans_cluster(projected, cfg.clusters, cfg.seed)
    except KTooLargeError as exc:
        raise ConfigError(str(exc)) from exc
    reps = cohort.choose_representatives(model, projected, ids)
    curve = cohort.wcss_curve(projected,
                              range(1, min(len(feats), max(cfg.clusters, 10)) + 1),
                              cfg.seed)
    doc = cohort.cluster_results_to_json(model, ids, reps, curve)
    (out_dir / "clusters.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n")
    proj_lines = ["image_id,pc1,pc2"]
    proj_lines += [f"{i},{p[0]:.6f},{p[1]:.6f}" for i, p in zip(ids, projected)]
    (out_dir / "projection.csv").write_text("\n".join(proj_lines) + "\n")
    _write_manifest(cfg, "cluster", out_dir, entries,
                    {"process": time.perf_counter() - t0})
    for rep in reps:
        print(rep)
    failures = [e for e in entries if e["status"] == "error"]
    for e in failures:
        print(f"error: {e['image']}: {e['message']}", file=sys.stderr)
    return 1 if failures else 0


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--method",
                   choices=[m.value for m in Method], default=None)
    p.add_argument("--reference", default=None, help="reference image path")
    p.add_argument("--input", default=None, help="input image directory")
    p.add_argument("--output", default=None, help="output directory")
    p.add_argument("--normalized", default=None,
                   help="directory of normalized images (evaluate)")
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--tile-size", dest="tile_size", type=int, default=None)
    p.add_argument("--downsample", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--clusters", type=int, default=None,
                   help="cluster count for the cluster command")
    p.add_argument("--vahadane-solver", dest="vahadane_solver",
                   choices=["nnls", "sparse"], default=None)
    p.add_argument("--sparsity-lambda", dest="sparsity_lambda",
                   type=float, default=None)
    p.add_argument("--skip-ssim", dest="skip_ssim", action="store_true",
                   default=None)
    p.add_argument("--skip-histogram", dest="skip_histogram",
                   action="store_true", default=None)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stainbench",
        description="Whole-image stain normalization and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("normalize", cmd_normalize),
                     ("evaluate", cmd_evaluate),
                     ("select-reference", cmd_select_reference),
                     ("cluster", cmd_cluster)):
        p = sub.add_parser(name)
        _add_common_flags(p)
        p.set_defaults(fn=fn)
    ver = sub.add_parser("version")
    ver.set_defaults(fn=None)

    args = parser.parse_args(argv)
    if args.fn is None:
        print(__version__)
        return 0
    try:
        cfg = _build_config(args)
        return args.fn(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

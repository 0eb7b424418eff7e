"""Raster image IO, downsampling, tiling, and stitching.

All other modules operate on in-memory :class:`RgbImage` values produced
here. Images are immutable: the pixel buffer is marked read-only so models
fitted on an image can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, InconsistentGridError

SCAN_MICRONS_PER_PIXEL = 0.46
SCAN_MAGNIFICATION = 20.0
DEFAULT_TILE_SIZE = 512


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr and arr.flags.writeable:
        out = arr.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class RgbImage:
    """8-bit interleaved RGB raster, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.ndim != 3 or p.shape[2] != 3:
            raise ValueError("pixels must be an (h, w, 3) array")
        if p.dtype != np.uint8:
            raise ValueError("pixels must be uint8")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        object.__setattr__(self, "pixels", _readonly(p))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class TileGrid:
    """Non-overlapping row-major tiling of a source image.

    Edge tiles keep only true pixels (no padding), so a grid stitches back
    to the source bit-exactly.
    """

    tile_size: int
    tiles: tuple  # of (row, col, RgbImage)
    source_dims: tuple  # (width, height)

    @property
    def rows(self) -> int:
        return -(-self.source_dims[1] // self.tile_size)

    @property
    def cols(self) -> int:
        return -(-self.source_dims[0] // self.tile_size)


@dataclass(frozen=True)
class ResolutionMeta:
    """Physical resolution of a raster."""

    microns_per_pixel: float = SCAN_MICRONS_PER_PIXEL
    magnification: float = SCAN_MAGNIFICATION

    def __post_init__(self):
        if not self.microns_per_pixel > 0:
            raise ValueError("microns_per_pixel must be positive")

    def downsampled(self, factor: int) -> "ResolutionMeta":
        return ResolutionMeta(self.microns_per_pixel * factor,
                              self.magnification / factor)


def load_image(path) -> RgbImage:
    """Decode a PNG or TIFF file into an :class:`RgbImage`.

    16-bit samples are reduced to 8 bits by dropping the low byte; gray
    and paletted images are expanded to RGB; alpha is discarded.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "TIFF"):
                raise DecodeError(f"{path}: unsupported format {im.format!r}")
            arr = np.asarray(im)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    if arr.dtype == np.uint16:
        arr = (arr >> 8).astype(np.uint8)
    elif arr.dtype == np.int32:  # Pillow mode "I" for some 16-bit TIFFs
        arr = (np.clip(arr, 0, 65535).astype(np.uint16) >> 8).astype(np.uint8)
    elif arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    elif arr.dtype != np.uint8:
        raise DecodeError(f"{path}: unsupported sample type {arr.dtype}")
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif arr.ndim == 3 and arr.shape[2] >= 3:
        arr = arr[:, :, :3]
    else:
        raise DecodeError(f"{path}: unsupported channel layout {arr.shape}")
    return RgbImage(arr)


def save_image(img: RgbImage, path) -> None:
    """Write a lossless 8-bit RGB PNG; reloading reproduces img exactly."""
    path = Path(path)
    Image.fromarray(np.asarray(img.pixels), mode="RGB").save(path, format="PNG")


def downsample(img: RgbImage, factor: int) -> RgbImage:
    """Mean-pool by an integer factor; output dims are ceil(dims / factor).

    Partial edge blocks average over the pixels actually present. Means are
    rounded half-up to the nearest intensity level.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError("factor must be a positive integer")
    if factor == 1:
        return img
    h, w = img.height, img.width
    acc = img.pixels.astype(np.float64)
    row_idx = np.arange(0, h, factor)
    col_idx = np.arange(0, w, factor)
    acc = np.add.reduceat(acc, row_idx, axis=0)
    acc = np.add.reduceat(acc, col_idx, axis=1)
    row_counts = np.diff(np.append(row_idx, h))
    col_counts = np.diff(np.append(col_idx, w))
    counts = row_counts[:, None] * col_counts[None, :]
    mean = acc / counts[:, :, None]
    return RgbImage(np.floor(mean + 0.5).astype(np.uint8))


def tile_image(img: RgbImage, tile_size: int = DEFAULT_TILE_SIZE) -> TileGrid:
    """Split into row-major tiles of at most tile_size pixels per side."""
    if not isinstance(tile_size, (int, np.integer)) or tile_size < 1:
        raise ValueError("tile_size must be a positive integer")
    tiles = []
    for r, y in enumerate(range(0, img.height, tile_size)):
        for c, x in enumerate(range(0, img.width, tile_size)):
            patch = img.pixels[y:y + tile_size, x:x + tile_size]
            tiles.append((r, c, RgbImage(patch)))
    return TileGrid(tile_size=int(tile_size), tiles=tuple(tiles),
                    source_dims=(img.width, img.height))


def stitch_tiles(grid: TileGrid) -> RgbImage:
    """Reassemble a TileGrid; inverse of :func:`tile_image` bit-exactly."""
    w, h = grid.source_dims
    ts = grid.tile_size
    rows, cols = grid.rows, grid.cols
    seen = {}
    for r, c, tile in grid.tiles:
        if not (0 <= r < rows and 0 <= c < cols):
            raise InconsistentGridError(f"tile ({r},{c}) outside grid {rows}x{cols}")
        if (r, c) in seen:
            raise InconsistentGridError(f"duplicate tile ({r},{c})")
        expect_h = min(ts, h - r * ts)
        expect_w = min(ts, w - c * ts)
        if tile.height != expect_h or tile.width != expect_w:
            raise InconsistentGridError(
                f"tile ({r},{c}) is {tile.width}x{tile.height}, "
                f"expected {expect_w}x{expect_h}")
        seen[(r, c)] = tile
    if len(seen) != rows * cols:
        raise InconsistentGridError(
            f"grid has {len(seen)} tiles, expected {rows * cols}")
    out = np.empty((h, w, 3), dtype=np.uint8)
    for (r, c), tile in seen.items():
        out[r * ts:r * ts + tile.height, c * ts:c * ts + tile.width] = tile.pixels
    return RgbImage(out)

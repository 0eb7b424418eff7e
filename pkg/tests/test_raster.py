import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from stainbench import (RgbImage, downsample, load_image, save_image,
                        stitch_tiles, tile_image)
from stainbench.errors import DecodeError, InconsistentGridError
from stainbench.raster import ResolutionMeta, TileGrid

from synth import constant_rgb, random_rgb

rgb_arrays = arrays(np.uint8,
                    st.tuples(st.integers(1, 24), st.integers(1, 24),
                              st.just(3)),
                    elements=st.integers(0, 255))


def test_load_dimension_echo(tmp_path):
    path = tmp_path / "two.png"
    Image.fromarray(np.zeros((2, 2, 3), np.uint8)).save(path)
    img = load_image(path)
    assert (img.width, img.height) == (2, 2)


def test_save_load_round_trip(tmp_path):
    img = random_rgb(np.random.default_rng(0), 7, 5)
    save_image(img, tmp_path / "x.png")
    again = load_image(tmp_path / "x.png")
    assert np.array_equal(img.pixels, again.pixels)


def test_save_overwrites(tmp_path):
    path = tmp_path / "x.png"
    save_image(constant_rgb(255, 0, 0, 1, 1), path)
    save_image(constant_rgb(0, 255, 0, 1, 1), path)
    assert np.array_equal(load_image(path).pixels[0, 0], [0, 255, 0])


def test_load_missing_file():
    with pytest.raises(FileNotFoundError):
        load_image("/no/such/file.png")


def test_save_unwritable_destination(tmp_path):
    with pytest.raises(OSError):
        save_image(constant_rgb(1, 2, 3, 1, 1), tmp_path)  # a directory


def test_load_corrupt_file(tmp_path):
    path = tmp_path / "bad.png"
    path.write_bytes(b"\x89PNG\r\n\x1a\nnot really a png")
    with pytest.raises(DecodeError):
        load_image(path)


def test_load_rejects_other_formats(tmp_path):
    path = tmp_path / "x.bmp"
    Image.fromarray(np.zeros((2, 2, 3), np.uint8)).save(path, format="BMP")
    with pytest.raises(DecodeError):
        load_image(path)


def test_16bit_tiff_truncates_low_byte(tmp_path):
    data = np.array([[0xABCD, 0x00FF], [0xFF00, 0x1234]], dtype=np.uint16)
    path = tmp_path / "deep.tif"
    Image.fromarray(data).save(path, format="TIFF")
    img = load_image(path)
    expected = (data >> 8).astype(np.uint8)
    assert np.array_equal(img.pixels[:, :, 0], expected)
    assert np.array_equal(img.pixels[:, :, 1], expected)  # gray replicated


def test_rgba_png_drops_alpha(tmp_path):
    arr = np.dstack([np.full((3, 3), 10, np.uint8),
                     np.full((3, 3), 20, np.uint8),
                     np.full((3, 3), 30, np.uint8),
                     np.full((3, 3), 40, np.uint8)])
    path = tmp_path / "rgba.png"
    Image.fromarray(arr, "RGBA").save(path)
    img = load_image(path)
    assert np.array_equal(img.pixels[0, 0], [10, 20, 30])


def test_downsample_identity():
    img = random_rgb(np.random.default_rng(1), 6, 6)
    assert downsample(img, 1) is img


def test_downsample_constant_preserved():
    out = downsample(constant_rgb(100, 100, 100, 4, 4), 2)
    assert (out.width, out.height) == (2, 2)
    assert (out.pixels == 100).all()


def test_downsample_direct_mean():
    arr = np.zeros((2, 2, 3), np.uint8)
    arr[:, :, 0] = [[0, 100], [200, 100]]
    out = downsample(RgbImage(arr), 2)
    assert out.pixels[0, 0, 0] == 100  # (0+100+200+100)/4


def test_downsample_partial_blocks():
    rng = np.random.default_rng(2)
    img = random_rgb(rng, 5, 7)
    out = downsample(img, 3)
    assert (out.height, out.width) == (2, 3)
    # oracle: plain nested-loop mean over present pixels
    for by in range(2):
        for bx in range(3):
            block = img.pixels[by * 3:(by + 1) * 3, bx * 3:(bx + 1) * 3, :]
            expect = np.floor(block.reshape(-1, 3).mean(axis=0) + 0.5)
            assert np.array_equal(out.pixels[by, bx], expect.astype(np.uint8))


def test_downsample_zero_factor():
    with pytest.raises(ValueError):
        downsample(constant_rgb(0, 0, 0), 0)


def test_tile_exact_division():
    grid = tile_image(random_rgb(np.random.default_rng(3), 1024, 1024), 512)
    assert len(grid.tiles) == 4
    assert all(t.width == 512 and t.height == 512 for _, _, t in grid.tiles)


def test_tile_edge_sizes():
    grid = tile_image(random_rgb(np.random.default_rng(4), 700, 700), 512)
    assert len(grid.tiles) == 4
    sizes = {(r, c): (t.width, t.height) for r, c, t in grid.tiles}
    assert sizes[(0, 0)] == (512, 512)
    assert sizes[(0, 1)] == (188, 512)
    assert sizes[(1, 0)] == (512, 188)
    assert sizes[(1, 1)] == (188, 188)


def test_tile_single():
    img = random_rgb(np.random.default_rng(5), 100, 100)
    grid = tile_image(img, 512)
    assert len(grid.tiles) == 1
    assert np.array_equal(grid.tiles[0][2].pixels, img.pixels)


def test_tile_zero_size():
    with pytest.raises(ValueError):
        tile_image(constant_rgb(0, 0, 0), 0)


@settings(max_examples=40, deadline=None)
@given(rgb_arrays, st.integers(1, 9))
def test_tile_stitch_round_trip(arr, tile_size):
    img = RgbImage(arr)
    assert np.array_equal(stitch_tiles(tile_image(img, tile_size)).pixels,
                          img.pixels)


def test_stitch_missing_tile():
    grid = tile_image(random_rgb(np.random.default_rng(6), 700, 700), 512)
    broken = TileGrid(grid.tile_size, grid.tiles[:-1], grid.source_dims)
    with pytest.raises(InconsistentGridError):
        stitch_tiles(broken)


def test_stitch_wrong_tile_shape():
    grid = tile_image(random_rgb(np.random.default_rng(7), 64, 64), 32)
    r, c, _ = grid.tiles[0]
    bad = ((r, c, constant_rgb(0, 0, 0, 3, 3)),) + grid.tiles[1:]
    with pytest.raises(InconsistentGridError):
        stitch_tiles(TileGrid(grid.tile_size, bad, grid.source_dims))


def test_pixels_are_immutable():
    img = constant_rgb(9, 9, 9)
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 1


def test_resolution_meta_downsampled():
    meta = ResolutionMeta()
    ten_x = meta.downsampled(2)
    assert ten_x.microns_per_pixel == pytest.approx(0.92)
    assert ten_x.magnification == pytest.approx(10.0)

from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from conftest import write_pyramid_tiff
from slidetile.errors import CorruptPyramid, InvalidLevel, UnsupportedFormat
from slidetile.slide_io import (RegionSpec, open_slide, read_region,
                                resample_area, thumbnail)


def checker(w, h, a=(0, 0, 0), b=(255, 255, 255)):
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[::2, ::2] = a
    img[1::2, 1::2] = a
    img[::2, 1::2] = b
    img[1::2, ::2] = b
    return img


def write_ppm(path, arr):
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(arr.tobytes())


class TestOpenSlide:
    def test_pyramid_levels_echoed(self, tmp_path):
        rng = np.random.default_rng(0)
        base = rng.integers(0, 255, size=(1024, 1536, 3), dtype=np.uint8)
        dims = write_pyramid_tiff(tmp_path / "p.tif", base, n_levels=3)
        slide = open_slide(tmp_path / "p.tif")
        assert [(lv.width, lv.height) for lv in slide.levels] == dims
        assert slide.levels[0].downsample == 1.0
        assert [round(lv.downsample) for lv in slide.levels] == [1, 2, 4]

    def test_flat_png_single_level(self, tmp_path):
        arr = checker(64, 48)
        Image.fromarray(arr).save(tmp_path / "flat.png")
        slide = open_slide(tmp_path / "flat.png")
        assert len(slide.levels) == 1
        assert (slide.width0, slide.height0) == (64, 48)
        assert slide.levels[0].downsample == 1.0

    def test_flat_ppm(self, tmp_path):
        arr = checker(32, 32)
        write_ppm(tmp_path / "flat.ppm", arr)
        slide = open_slide(tmp_path / "flat.ppm")
        region = read_region(slide, RegionSpec(0, 0, 0, 32, 32))
        assert np.array_equal(region, arr)

    def test_truncated_tiff_is_corrupt(self, tmp_path):
        base = checker(512, 512)
        write_pyramid_tiff(tmp_path / "p.tif", base)
        data = (tmp_path / "p.tif").read_bytes()
        (tmp_path / "trunc.tif").write_bytes(data[: len(data) // 3])
        with pytest.raises(CorruptPyramid):
            open_slide(tmp_path / "trunc.tif").level_array(0)

    def test_inconsistent_level_table(self):
        from slidetile.slide_io import build_level_table

        # level 1 height does not reconstruct level 0 within one coarse pixel
        with pytest.raises(CorruptPyramid):
            build_level_table([(8192, 6144), (4096, 1000)])
        # unsorted downsample factors
        with pytest.raises(CorruptPyramid):
            build_level_table([(8192, 6144), (2048, 1536), (4096, 3072)])
        # the canonical declared table passes
        infos = build_level_table([(8192, 6144), (4096, 3072), (2048, 1536)])
        assert [round(i.downsample) for i in infos] == [1, 2, 4]

    def test_unrecognized_container(self, tmp_path):
        (tmp_path / "junk.bin").write_bytes(b"this is not an image at all")
        with pytest.raises(UnsupportedFormat):
            open_slide(tmp_path / "junk.bin")

    def test_missing_file(self, tmp_path):
        with pytest.raises(UnsupportedFormat):
            open_slide(tmp_path / "nope.png")


class TestReadRegion:
    @pytest.fixture()
    def slide(self, tmp_path):
        rng = np.random.default_rng(7)
        arr = rng.integers(0, 255, size=(300, 400, 3), dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / "s.png")
        return open_slide(tmp_path / "s.png"), arr

    def test_identity_read(self, slide):
        s, arr = slide
        region = read_region(s, RegionSpec(0, 50, 40, 100, 80))
        assert np.array_equal(region, arr[40:120, 50:150])

    def test_right_edge_padding(self, slide):
        s, arr = slide
        region = read_region(s, RegionSpec(0, 390, 0, 270, 50))
        assert np.array_equal(region[:, :10], arr[:50, 390:400])
        assert (region[:, 10:] == 255).all()

    def test_negative_origin_padding(self, slide):
        s, arr = slide
        region = read_region(s, RegionSpec(0, -20, -10, 50, 50))
        assert (region[:10, :] == 255).all()
        assert (region[:, :20] == 255).all()
        assert np.array_equal(region[10:, 20:], arr[0:40, 0:30])

    def test_fully_outside_is_white(self, slide):
        s, _ = slide
        region = read_region(s, RegionSpec(0, 1000, 1000, 64, 64))
        assert (region == 255).all()

    def test_repeat_reads_bit_identical(self, slide):
        s, _ = slide
        spec = RegionSpec(0, 123, 45, 99, 77)
        a = read_region(s, spec)
        b = read_region(s, spec)
        assert np.array_equal(a, b)

    def test_output_size_always_matches_request(self, slide):
        s, _ = slide
        for spec in [RegionSpec(0, 395, 295, 64, 64), RegionSpec(0, -5, -5, 16, 8)]:
            region = read_region(s, spec)
            assert region.shape == (spec.height, spec.width, 3)

    def test_invalid_level(self, slide):
        s, _ = slide
        with pytest.raises(InvalidLevel):
            read_region(s, RegionSpec(3, 0, 0, 10, 10))

    def test_level1_read_from_pyramid(self, tmp_path):
        base = np.full((512, 512, 3), 80, dtype=np.uint8)
        write_pyramid_tiff(tmp_path / "p.tif", base)
        slide = open_slide(tmp_path / "p.tif")
        region = read_region(slide, RegionSpec(1, 0, 0, 256, 256))
        assert (region == 80).all()

    def test_concurrent_reads_deterministic(self, slide):
        from concurrent.futures import ThreadPoolExecutor

        s, _ = slide
        spec = RegionSpec(0, 10, 10, 120, 120)
        expected = read_region(s, spec)
        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(lambda _: read_region(s, spec), range(32)))
        assert all(np.array_equal(r, expected) for r in results)


class TestThumbnail:
    def test_uniform_slide(self, tmp_path):
        arr = np.full((400, 400, 3), 137, dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / "u.png")
        thumb = thumbnail(open_slide(tmp_path / "u.png"), 100, 100)
        assert thumb.shape == (100, 100, 3)
        assert (thumb == 137).all()

    def test_anisotropic_target(self, tmp_path):
        rng = np.random.default_rng(3)
        arr = rng.integers(0, 255, size=(500, 1000, 3), dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / "a.png")
        thumb = thumbnail(open_slide(tmp_path / "a.png"), 500, 500)
        assert thumb.shape == (500, 500, 3)
        # x averages pairs of columns, y is untouched
        pair_mean = arr.reshape(500, 500, 2, 3).mean(axis=2)
        expected = np.floor(pair_mean + 0.5).astype(np.uint8)
        assert np.array_equal(thumb, expected)

    def test_checkerboard_mean(self):
        tile = checker(2, 2)
        out = resample_area(tile, 1, 1)
        expected = np.floor(tile.reshape(4, 3).mean(axis=0) + 0.5).astype(np.uint8)
        assert np.array_equal(out[0, 0], expected)

    def test_identity_when_target_equals_dims(self, tmp_path):
        rng = np.random.default_rng(9)
        arr = rng.integers(0, 255, size=(64, 96, 3), dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / "i.png")
        slide = open_slide(tmp_path / "i.png")
        assert np.array_equal(thumbnail(slide, 96, 64), arr)

    def test_fractional_scale_matches_bruteforce(self):
        rng = np.random.default_rng(17)
        arr = rng.integers(0, 255, size=(10, 7, 3), dtype=np.uint8)
        out = resample_area(arr, 3, 4)
        # brute force per output pixel: integrate exact source boxes
        for oy in range(4):
            for ox in range(3):
                y0, y1 = oy * 10 / 4, (oy + 1) * 10 / 4
                x0, x1 = ox * 7 / 3, (ox + 1) * 7 / 3
                acc = np.zeros(3)
                for sy in range(10):
                    wy = max(0.0, min(y1, sy + 1) - max(y0, sy))
                    if wy == 0.0:
                        continue
                    for sx in range(7):
                        wx = max(0.0, min(x1, sx + 1) - max(x0, sx))
                        if wx:
                            acc += wy * wx * arr[sy, sx]
                mean = acc / ((y1 - y0) * (x1 - x0))
                assert np.all(np.abs(out[oy, ox].astype(float) - mean) <= 0.5 + 1e-6)

    def test_uses_coarser_level(self, tmp_path):
        base = np.full((1024, 1024, 3), 60, dtype=np.uint8)
        write_pyramid_tiff(tmp_path / "p.tif", base, n_levels=3)
        slide = open_slide(tmp_path / "p.tif")
        thumb = thumbnail(slide, 128, 128)
        assert thumb.shape == (128, 128, 3)
        assert (thumb == 60).all()

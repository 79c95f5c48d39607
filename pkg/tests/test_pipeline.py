from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import aligned_config, fake_sidecar_cmd
from slidetile.errors import NoTissueFound
from slidetile.pipeline import plan_slide, run_pipeline
from slidetile.report import labels_from_render
from slidetile.runio import load_manifest, load_meta
from slidetile.slide_io import open_slide


class TestPlanSlide:
    def test_aligned_roi_exact(self, clean_slide):
        slide = open_slide(clean_slide[0])
        grid = plan_slide(slide, aligned_config())
        assert (grid.roi.x0, grid.roi.y0, grid.roi.x1, grid.roi.y1) == (328, 328, 868, 868)
        assert (grid.n_cols, grid.n_rows) == (2, 2)

    def test_fold_fixture_grid(self, fold_slide):
        slide = open_slide(fold_slide[0])
        grid = plan_slide(slide, aligned_config())
        assert (grid.roi.x0, grid.roi.y0, grid.roi.x1, grid.roi.y1) == (328, 60, 868, 1140)
        assert (grid.n_cols, grid.n_rows) == (2, 4)

    def test_blank_slide_aborts(self, tmp_path):
        from PIL import Image

        arr = np.full((400, 400, 3), 255, dtype=np.uint8)
        Image.fromarray(arr).save(tmp_path / "blank.png")
        slide = open_slide(tmp_path / "blank.png")
        with pytest.raises(NoTissueFound):
            plan_slide(slide, aligned_config(thumb_w=100, thumb_h=100))


class TestRunPipeline:
    def test_clean_slide_all_centers(self, clean_slide, tmp_path):
        stats = run_pipeline(clean_slide[0], aligned_config(), tmp_path / "out")
        records = load_manifest(tmp_path / "out")
        assert [r.set_index for r in records] == [1, 2, 3, 4]
        assert all(r.chosen == "C" for r in records)
        assert stats.qt_gain_percent == 0.0
        assert stats.baseline_retained == 4
        assert stats.n_discarded_pen == 0

    def test_fold_slide_shifts_and_gains(self, fold_slide, tmp_path):
        stats = run_pipeline(fold_slide[0], aligned_config(), tmp_path / "out")
        records = load_manifest(tmp_path / "out")
        assert any(r.chosen != "C" for r in records)
        assert stats.qt_gain_percent is not None and stats.qt_gain_percent > 0

    def test_worker_count_does_not_change_manifest(self, realistic_slide, tmp_path):
        out1 = tmp_path / "w1"
        out8 = tmp_path / "w8"
        run_pipeline(realistic_slide[0], aligned_config(thumb_w=375, thumb_h=375,
                                                        workers=1), out1)
        run_pipeline(realistic_slide[0], aligned_config(thumb_w=375, thumb_h=375,
                                                        workers=8), out8)
        assert (out1 / "manifest.jsonl").read_bytes() == (out8 / "manifest.jsonl").read_bytes()
        assert (out1 / "stats.json").read_bytes() == (out8 / "stats.json").read_bytes()

    def test_rerun_byte_identical(self, fold_slide, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_pipeline(fold_slide[0], aligned_config(), a)
        run_pipeline(fold_slide[0], aligned_config(), b)
        assert (a / "manifest.jsonl").read_bytes() == (b / "manifest.jsonl").read_bytes()

    def test_pen_slide_cleans_and_records(self, pen_slide, tmp_path):
        from PIL import Image

        cfg = aligned_config()
        run_pipeline(pen_slide[0], cfg, tmp_path / "out")
        records = load_manifest(tmp_path / "out")
        assert any(any(r.cleaned.values()) for r in records)
        with Image.open(tmp_path / "out" / "mosaic.png") as img:
            mosaic = labels_from_render(np.asarray(img.convert("RGB")))
        meta = load_meta(tmp_path / "out")
        assert mosaic.shape == (meta.roi.height, meta.roi.width)

    def test_sidecar_backends_match_heuristic(self, tmp_path, clean_slide):
        cfg_h = aligned_config()
        cfg_s = aligned_config(segmentation={"kind": "sidecar",
                                             "sidecar_cmd": fake_sidecar_cmd("ok"),
                                             "sidecar_procs": 2})
        out_h, out_s = tmp_path / "h", tmp_path / "s"
        run_pipeline(clean_slide[0], cfg_h, out_h)
        run_pipeline(clean_slide[0], cfg_s, out_s)
        assert (out_h / "manifest.jsonl").read_bytes() == (out_s / "manifest.jsonl").read_bytes()

    def test_label_counts_csv_matches_stats(self, fold_slide, tmp_path):
        run_pipeline(fold_slide[0], aligned_config(), tmp_path / "out")
        stats = json.loads((tmp_path / "out" / "stats.json").read_text())
        rows = (tmp_path / "out" / "label_counts.csv").read_text().splitlines()[1:]
        csv_counts = {int(r.split(",")[0]): int(r.split(",")[1]) for r in rows}
        assert csv_counts == {int(k): v for k, v in stats["label_pixels"].items()}

    def test_manifest_plus_discards_equals_total(self, pen_slide, tmp_path):
        stats = run_pipeline(pen_slide[0], aligned_config(), tmp_path / "out")
        records = load_manifest(tmp_path / "out")
        assert len(records) + stats.n_discarded_pen == stats.n_total


class TestBaselineSemantics:
    def test_cleaned_center_gets_own_baseline_raster(self, pen_slide, tmp_path):
        """Sets whose center was modified by cleaning carry a raw-center (B)
        entry so the standard-tiling baseline sees the uncleaned slide."""
        from slidetile.pipeline import triage_stage

        cfg = aligned_config()
        slide = open_slide(pen_slide[0])
        grid = plan_slide(slide, cfg)
        plans, rasters = triage_stage(slide, grid, cfg, None)
        assert any(p.baseline_source == "B" for p in plans)
        for plan in plans:
            if plan.baseline_source == "B":
                assert f"tile_{plan.set_index:06d}_B" in rasters
            else:
                assert plan.members and plan.members[0] == "C"
                assert plan.cleaned["C"] is False

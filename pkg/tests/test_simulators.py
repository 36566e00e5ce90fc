"""Guidance-simulator contracts: coverage, foreground containment, determinism."""

import numpy as np
import pytest
from scipy import ndimage
from skimage.measure import label

from memseg.data import ValidationError
from memseg.simulate import (
    SimulatorConfig,
    simulate_bbox,
    simulate_extreme_points,
    simulate_guidance,
    simulate_scribbles,
)
from memseg.synthetic import SyntheticVolumeSpec, generate_synthetic_volume


def disk_mask(h=40, w=40, center=(20, 20), radius=12):
    yy, xx = np.mgrid[0:h, 0:w]
    return (((yy - center[0]) ** 2 + (xx - center[1]) ** 2) <= radius ** 2).astype(np.uint8)


class TestBBox:
    def test_zero_jitter_reproduces_tight_box(self):
        gt = np.zeros((30, 30), dtype=np.uint8)
        gt[5:12, 8:20] = 1
        g = simulate_bbox(gt, SimulatorConfig(seed=0, bbox_jitter_px=0))
        expected = np.zeros((30, 30), dtype=np.uint8)
        expected[5:12, 8:20] = 1
        np.testing.assert_array_equal(g.pixels, expected)
        assert g.interaction_type == "bounding_box"

    def test_fixed_seed_reproducible(self):
        gt = disk_mask()
        cfg = SimulatorConfig(seed=11, bbox_jitter_px=3)
        a = simulate_bbox(gt, cfg)
        b = simulate_bbox(gt, cfg)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_coverage_at_least_ninety_percent_over_seeds(self):
        gt = disk_mask()
        total = gt.sum()
        for seed in range(100):
            g = simulate_bbox(gt, SimulatorConfig(seed=seed, bbox_jitter_px=3))
            covered = int((g.pixels & gt).sum())
            assert covered >= 0.90 * total, f"seed {seed}: {covered}/{total}"

    def test_empty_gt_rejected(self):
        with pytest.raises(ValidationError):
            simulate_bbox(np.zeros((20, 20), dtype=np.uint8), SimulatorConfig())


class TestExtremePoints:
    def test_rectangle_midline_points_without_jitter(self):
        gt = np.zeros((40, 60), dtype=np.uint8)
        gt[10:21, 30:41] = 1  # 11x11 block, centered at (15, 35)
        cfg = SimulatorConfig(seed=0, extreme_jitter_px=0, scribble_thickness=1)
        g = simulate_extreme_points(gt, cfg)
        expected = np.zeros((40, 60), dtype=np.uint8)
        for r, c in ((15, 30), (15, 40), (10, 35), (20, 35)):
            expected[r, c] = 1
        np.testing.assert_array_equal(g.pixels, expected)
        assert g.interaction_type == "extreme_points"

    def test_points_always_on_foreground(self):
        rng = np.random.default_rng(5)
        for seed in range(50):
            gt = disk_mask(radius=int(rng.integers(5, 15)))
            g = simulate_extreme_points(gt, SimulatorConfig(seed=seed, extreme_jitter_px=4))
            assert ((g.pixels == 1) & (gt == 0)).sum() == 0

    def test_single_pixel_gt_degenerates_to_that_pixel(self):
        gt = np.zeros((20, 20), dtype=np.uint8)
        gt[7, 9] = 1
        g = simulate_extreme_points(gt, SimulatorConfig(seed=3, extreme_jitter_px=2))
        expected = np.zeros((20, 20), dtype=np.uint8)
        expected[7, 9] = 1
        np.testing.assert_array_equal(g.pixels, expected)

    def test_deterministic(self):
        gt = disk_mask()
        cfg = SimulatorConfig(seed=21)
        np.testing.assert_array_equal(simulate_extreme_points(gt, cfg).pixels,
                                      simulate_extreme_points(gt, cfg).pixels)


class TestScribbles:
    def test_disk_gives_connected_interior_curve(self):
        gt = disk_mask(h=50, w=50, center=(25, 25), radius=15)
        g = simulate_scribbles(gt, SimulatorConfig(seed=0))
        assert ((g.pixels == 1) & (gt == 0)).sum() == 0
        boundary = gt & ~ndimage.binary_erosion(gt)
        assert (g.pixels & boundary).sum() == 0, "scribble touches the gt boundary"
        assert label(g.pixels, connectivity=2).max() == 1, "scribble is disconnected"

    def test_thin_line_falls_back_to_centroid_cross(self):
        gt = np.zeros((30, 30), dtype=np.uint8)
        gt[14, 5:25] = 1
        g = simulate_scribbles(gt, SimulatorConfig(seed=0, scribble_erosion_radius=2))
        assert g.pixels.any()
        assert ((g.pixels == 1) & (gt == 0)).sum() == 0

    def test_hundred_random_blobs_stay_inside_gt(self):
        for seed in range(100):
            spec = SyntheticVolumeSpec(shape=(64, 64, 2), kind="blob", seed=seed,
                                       radius_range=(8.0, 16.0))
            _, gt = generate_synthetic_volume(spec)
            sl = gt[:, :, 0]
            if not sl.any():
                continue
            g = simulate_scribbles(sl, SimulatorConfig(seed=seed))
            assert ((g.pixels == 1) & (sl == 0)).sum() == 0, f"seed {seed} escaped gt"

    def test_deterministic(self):
        gt = disk_mask()
        cfg = SimulatorConfig(seed=9)
        np.testing.assert_array_equal(simulate_scribbles(gt, cfg).pixels,
                                      simulate_scribbles(gt, cfg).pixels)


class TestDispatchAndConfig:
    def test_dispatch_covers_all_types(self):
        gt = disk_mask()
        cfg = SimulatorConfig(seed=1)
        for itype in ("scribble", "bounding_box", "extreme_points"):
            g = simulate_guidance(itype, gt, cfg, slice_index=4)
            assert g.interaction_type == itype
            assert g.slice_index == 4

    def test_unknown_type_rejected(self):
        with pytest.raises(ValidationError):
            simulate_guidance("clicks", disk_mask(), SimulatorConfig())

    def test_negative_jitter_rejected(self):
        with pytest.raises(ValidationError):
            SimulatorConfig(bbox_jitter_px=-1)

    def test_zero_thickness_rejected(self):
        with pytest.raises(ValidationError):
            SimulatorConfig(scribble_thickness=0)

    def test_scaled_defaults_shrink_with_resolution(self):
        desk = SimulatorConfig.scaled_for(96)
        assert desk.bbox_jitter_px == 1
        assert desk.extreme_jitter_px == 1
        full = SimulatorConfig.scaled_for(512)
        assert full.bbox_jitter_px == 5
        assert full.extreme_jitter_px == 3

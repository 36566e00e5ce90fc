"""Simulated user interactions derived from ground-truth masks.

Training and benchmarking need endless annotations, so the three guidance
styles (bounding box, extreme points, scribbles) are synthesized from
ground truth with small random relaxations standing in for human
imprecision. Every simulator is a pure function of (mask, config): the
seed lives in the config, so identical inputs give identical guidance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from skimage.morphology import disk, skeletonize

from .data import GuidanceMap, ValidationError

BBOX_COVERAGE_FLOOR = 0.90
_MAX_REDRAWS = 25


@dataclass(frozen=True)
class SimulatorConfig:
    """Relaxation magnitudes; the px defaults suit 512-sized slices."""

    seed: int = 0
    bbox_jitter_px: int = 5
    extreme_jitter_px: int = 3
    scribble_thickness: int = 3
    scribble_erosion_radius: int = 2

    def __post_init__(self) -> None:
        if self.bbox_jitter_px < 0 or self.extreme_jitter_px < 0:
            raise ValidationError("jitter magnitudes must be >= 0")
        if self.scribble_thickness < 1:
            raise ValidationError("scribble thickness must be >= 1")
        if self.scribble_erosion_radius < 0:
            raise ValidationError("erosion radius must be >= 0")

    def with_seed(self, seed: int) -> "SimulatorConfig":
        return replace(self, seed=seed)

    @classmethod
    def scaled_for(cls, side: int, seed: int = 0) -> "SimulatorConfig":
        """Defaults scaled proportionally from the 512-px reference."""
        return cls(
            seed=seed,
            bbox_jitter_px=max(1, round(5 * side / 512)),
            extreme_jitter_px=max(1, round(3 * side / 512)),
        )


def _check_gt(gt: np.ndarray) -> np.ndarray:
    arr = np.asarray(gt)
    if arr.ndim != 2:
        raise ValidationError(f"ground truth must be 2D, got shape {arr.shape}")
    arr = arr > 0
    if not arr.any():
        raise ValidationError("ground-truth mask has no foreground")
    return arr


def _nearest_foreground(gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index maps sending any pixel to its nearest gt-foreground pixel."""
    _, (rows, cols) = ndimage.distance_transform_edt(~gt, return_indices=True)
    return rows, cols


def _dilate_into_gt(points: np.ndarray, gt: np.ndarray, thickness: int) -> np.ndarray:
    """Thicken a sparse point/curve set, never leaving the gt foreground."""
    radius = max(0, thickness // 2)
    grown = ndimage.binary_dilation(points, structure=disk(radius)) if radius else points
    clipped = grown & gt
    return (clipped if clipped.any() else points & gt).astype(np.uint8)


def simulate_bbox(gt: np.ndarray, cfg: SimulatorConfig, slice_index: int = 0) -> GuidanceMap:
    """Filled tight box with jittered edges, covering >= 90% of the target."""
    mask = _check_gt(gt)
    h, w = mask.shape
    rows, cols = np.nonzero(mask)
    r_lo, r_hi = int(rows.min()), int(rows.max())
    c_lo, c_hi = int(cols.min()), int(cols.max())
    total = int(mask.sum())

    rng = np.random.default_rng(cfg.seed)
    j = cfg.bbox_jitter_px
    box = (r_lo, r_hi, c_lo, c_hi)
    for _ in range(_MAX_REDRAWS):
        if j == 0:
            break
        dr_lo, dr_hi, dc_lo, dc_hi = rng.integers(-j, j + 1, size=4)
        cand = (
            int(np.clip(r_lo + dr_lo, 0, h - 1)),
            int(np.clip(r_hi + dr_hi, 0, h - 1)),
            int(np.clip(c_lo + dc_lo, 0, w - 1)),
            int(np.clip(c_hi + dc_hi, 0, w - 1)),
        )
        if cand[0] > cand[1] or cand[2] > cand[3]:
            continue
        covered = int(mask[cand[0]:cand[1] + 1, cand[2]:cand[3] + 1].sum())
        if covered >= BBOX_COVERAGE_FLOOR * total:
            box = cand
            break
    pixels = np.zeros((h, w), dtype=np.uint8)
    pixels[box[0]:box[1] + 1, box[2]:box[3] + 1] = 1
    return GuidanceMap(pixels=pixels, interaction_type="bounding_box", slice_index=slice_index)


def _extreme_candidates(mask: np.ndarray) -> list[tuple[int, int]]:
    rows, cols = np.nonzero(mask)
    cr, cc = rows.mean(), cols.mean()

    def closest(rs: np.ndarray, cs: np.ndarray) -> tuple[int, int]:
        d2 = (rs - cr) ** 2 + (cs - cc) ** 2
        i = int(np.argmin(d2))
        return int(rs[i]), int(cs[i])

    picks = []
    for axis_vals, extreme in ((cols, cols.min()), (cols, cols.max())):
        sel = axis_vals == extreme
        picks.append(closest(rows[sel], cols[sel]))
    for axis_vals, extreme in ((rows, rows.min()), (rows, rows.max())):
        sel = axis_vals == extreme
        picks.append(closest(rows[sel], cols[sel]))
    return picks  # leftmost, rightmost, topmost, bottommost


def simulate_extreme_points(gt: np.ndarray, cfg: SimulatorConfig,
                            slice_index: int = 0) -> GuidanceMap:
    """Left/right/top/bottom foreground pixels, jittered then snapped back to gt."""
    mask = _check_gt(gt)
    h, w = mask.shape
    picks = _extreme_candidates(mask)
    rng = np.random.default_rng(cfg.seed)
    near_r, near_c = _nearest_foreground(mask)

    points = np.zeros((h, w), dtype=bool)
    j = cfg.extreme_jitter_px
    for r, c in picks:
        if j > 0:
            r = int(np.clip(r + rng.integers(-j, j + 1), 0, h - 1))
            c = int(np.clip(c + rng.integers(-j, j + 1), 0, w - 1))
        points[near_r[r, c], near_c[r, c]] = True
    pixels = _dilate_into_gt(points, mask, cfg.scribble_thickness)
    return GuidanceMap(pixels=pixels, interaction_type="extreme_points",
                       slice_index=slice_index)


def _centroid_cross(mask: np.ndarray, arm: int) -> np.ndarray:
    h, w = mask.shape
    rows, cols = np.nonzero(mask)
    cr, cc = int(round(rows.mean())), int(round(cols.mean()))
    cross = np.zeros((h, w), dtype=bool)
    cross[max(0, cr - arm):cr + arm + 1, cc] = True
    cross[cr, max(0, cc - arm):cc + arm + 1] = True
    hit = cross & mask
    if hit.any():
        return hit
    near_r, near_c = _nearest_foreground(mask)
    single = np.zeros((h, w), dtype=bool)
    cr = int(np.clip(cr, 0, h - 1))
    cc = int(np.clip(cc, 0, w - 1))
    single[near_r[cr, cc], near_c[cr, cc]] = True
    return single


def simulate_scribbles(gt: np.ndarray, cfg: SimulatorConfig,
                       slice_index: int = 0) -> GuidanceMap:
    """Center-line stroke: skeleton of the eroded target, thickened inside gt."""
    mask = _check_gt(gt)
    core = mask
    if cfg.scribble_erosion_radius > 0:
        core = ndimage.binary_erosion(mask, structure=disk(cfg.scribble_erosion_radius))
    curve = skeletonize(core) if core.any() else np.zeros_like(mask)
    if not curve.any():
        curve = _centroid_cross(mask, arm=max(1, cfg.scribble_thickness))
    pixels = _dilate_into_gt(curve, mask, cfg.scribble_thickness)
    return GuidanceMap(pixels=pixels, interaction_type="scribble", slice_index=slice_index)


_SIMULATORS = {
    "bounding_box": simulate_bbox,
    "extreme_points": simulate_extreme_points,
    "scribble": simulate_scribbles,
}


def simulate_guidance(interaction_type: str, gt: np.ndarray, cfg: SimulatorConfig,
                      slice_index: int = 0) -> GuidanceMap:
    """Dispatch to the simulator for one of the three interaction types."""
    try:
        fn = _SIMULATORS[interaction_type]
    except KeyError:
        raise ValidationError(f"unknown interaction type {interaction_type!r}") from None
    return fn(gt, cfg, slice_index=slice_index)

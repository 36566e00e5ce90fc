"""Core domain types and metrics shared across the package.

Conventions: a volume is an (h, w, c) array with the slice index last,
slice images are (h, w) arrays normalized to [0, 1], and all masks are
per-slice probability maps binarized at a fixed threshold of 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INTERACTION_TYPES = ("scribble", "bounding_box", "extreme_points")

BINARIZE_THRESHOLD = 0.5

MIN_SLICE_SIDE = 8
MIN_SLICE_COUNT = 2


class ValidationError(ValueError):
    """Raised when data violates a structural invariant (e.g. NaN voxels)."""


class NumericError(ArithmeticError):
    """Raised when a computation produces non-finite values."""


class TrainingError(RuntimeError):
    """Raised when an optimization run diverges (NaN/inf loss)."""


def _first_nonfinite_index(arr: np.ndarray) -> tuple[int, ...] | None:
    bad = ~np.isfinite(arr)
    if not bad.any():
        return None
    flat = int(np.flatnonzero(bad)[0])
    return tuple(int(i) for i in np.unravel_index(flat, arr.shape))


@dataclass(frozen=True)
class Volume:
    """A 3D intensity grid of shape (h, w, c) with c slices."""

    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    identifier: str = ""

    def __post_init__(self) -> None:
        v = np.asarray(self.voxels)
        if v.ndim != 3:
            raise ValidationError(f"volume must be 3D (h, w, c), got shape {v.shape}")
        h, w, c = v.shape
        if h < MIN_SLICE_SIDE or w < MIN_SLICE_SIDE or c < MIN_SLICE_COUNT:
            raise ValidationError(
                f"volume too small: shape {v.shape}, need h,w >= {MIN_SLICE_SIDE} and c >= {MIN_SLICE_COUNT}"
            )
        idx = _first_nonfinite_index(v)
        if idx is not None:
            raise ValidationError(f"non-finite voxel at index {idx}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValidationError(f"spacing must be 3 positive reals, got {self.spacing}")
        object.__setattr__(self, "voxels", v)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    @property
    def num_slices(self) -> int:
        return self.voxels.shape[2]

    def slice_image(self, k: int) -> np.ndarray:
        return self.voxels[:, :, k]


@dataclass(frozen=True)
class SliceMask:
    """Per-slice probability map plus the round it was produced in."""

    probabilities: np.ndarray
    slice_index: int
    round: int = 0

    def __post_init__(self) -> None:
        p = np.asarray(self.probabilities)
        if p.ndim != 2:
            raise ValidationError(f"mask must be 2D, got shape {p.shape}")
        idx = _first_nonfinite_index(p)
        if idx is not None:
            raise ValidationError(f"non-finite mask value at index {idx}")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValidationError("mask probabilities must lie in [0, 1]")
        if self.slice_index < 0:
            raise ValidationError(f"slice_index must be >= 0, got {self.slice_index}")
        if self.round < 0:
            raise ValidationError(f"round must be >= 0, got {self.round}")
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def neutral(cls, shape: tuple[int, int], slice_index: int, round: int = 0) -> "SliceMask":
        """The 0.5-everywhere mask used before any interaction has happened."""
        return cls(np.full(shape, 0.5, dtype=np.float32), slice_index, round)

    def with_round(self, round: int) -> "SliceMask":
        return SliceMask(self.probabilities, self.slice_index, round)


@dataclass(frozen=True)
class GuidanceMap:
    """Binary user-guidance image for one slice."""

    pixels: np.ndarray
    interaction_type: str
    slice_index: int

    def __post_init__(self) -> None:
        p = np.asarray(self.pixels)
        if p.ndim != 2:
            raise ValidationError(f"guidance must be 2D, got shape {p.shape}")
        vals = np.unique(p)
        if not np.isin(vals, (0, 1)).all():
            raise ValidationError("guidance pixels must be binary (0/1)")
        if not p.any():
            raise ValidationError("guidance must contain at least one foreground pixel")
        if self.interaction_type not in INTERACTION_TYPES:
            raise ValidationError(
                f"interaction_type must be one of {INTERACTION_TYPES}, got {self.interaction_type!r}"
            )
        object.__setattr__(self, "pixels", p.astype(np.uint8))


@dataclass(frozen=True)
class ROIBox:
    """Half-open pixel box: rows [row_min, row_max), cols [col_min, col_max)."""

    row_min: int
    row_max: int
    col_min: int
    col_max: int

    def __post_init__(self) -> None:
        if not (0 <= self.row_min < self.row_max and 0 <= self.col_min < self.col_max):
            raise ValidationError(f"degenerate ROI box {self}")

    @property
    def height(self) -> int:
        return self.row_max - self.row_min

    @property
    def width(self) -> int:
        return self.col_max - self.col_min

    def contains(self, other: "ROIBox") -> bool:
        return (
            self.row_min <= other.row_min
            and self.row_max >= other.row_max
            and self.col_min <= other.col_min
            and self.col_max >= other.col_max
        )

    def crop(self, image: np.ndarray) -> np.ndarray:
        return image[self.row_min : self.row_max, self.col_min : self.col_max]


@dataclass
class SegmentationState:
    """Mutable per-session segmentation state across refinement rounds."""

    masks: list[SliceMask]
    quality_scores: list[float]
    annotated_slices: set[int] = field(default_factory=set)
    round: int = 0

    @classmethod
    def initial(cls, volume: Volume) -> "SegmentationState":
        h, w, c = volume.shape
        masks = [SliceMask.neutral((h, w), k) for k in range(c)]
        return cls(masks=masks, quality_scores=[0.0] * c, annotated_slices=set(), round=0)

    @property
    def num_slices(self) -> int:
        return len(self.masks)

    def validate(self) -> None:
        c = len(self.masks)
        if len(self.quality_scores) != c:
            raise ValidationError("quality_scores length must match number of slices")
        if any(not (0.0 <= q <= 1.0) for q in self.quality_scores):
            raise ValidationError("quality scores must lie in [0, 1]")
        if any(not (0 <= k < c) for k in self.annotated_slices):
            raise ValidationError("annotated slice index out of range")

    def mask_volume(self, threshold: float = BINARIZE_THRESHOLD) -> np.ndarray:
        """Stack binarized slice masks into an (h, w, c) uint8 volume."""
        return np.stack(
            [(m.probabilities > threshold).astype(np.uint8) for m in self.masks], axis=2
        )


def binarize(mask: "SliceMask | np.ndarray", threshold: float = BINARIZE_THRESHOLD) -> np.ndarray:
    """Binary foreground: strictly greater than the threshold (0.5 maps to 0)."""
    probs = mask.probabilities if isinstance(mask, SliceMask) else np.asarray(mask)
    return (probs > threshold).astype(np.uint8)


def _check_binary_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def dsc(pred: np.ndarray, gt: np.ndarray) -> float:
    """Dice similarity coefficient 2|A∩B| / (|A| + |B|); 1.0 when both are empty."""
    a, b = _check_binary_pair(pred, gt)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; 1.0 when both are empty."""
    a, b = _check_binary_pair(pred, gt)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a, b).sum()) / union


def normalize_intensity(volume: Volume, clip_lo: float = -1024.0, clip_hi: float = 1024.0) -> Volume:
    """Clip voxels to [clip_lo, clip_hi] and affinely map that window to [0, 1]."""
    if clip_lo >= clip_hi:
        raise ValueError(f"clip_lo must be < clip_hi, got [{clip_lo}, {clip_hi}]")
    v = np.clip(volume.voxels.astype(np.float64), clip_lo, clip_hi)
    v = (v - clip_lo) / (clip_hi - clip_lo)
    return Volume(v.astype(np.float32), volume.spacing, volume.identifier)

"""Synthetic volumes with a single drifting target.

Stand-in for CT data: each volume renders one bright shape (disk, ellipse
or wobbly blob) whose center and radius wander smoothly from slice to
slice, over a darker noisy background. Ground truth is the exact rendered
shape, so generated data never has label noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ValidationError, Volume

TARGET_KINDS = ("disk", "ellipse", "blob")


@dataclass(frozen=True)
class SyntheticVolumeSpec:
    shape: tuple[int, int, int] = (96, 96, 20)
    kind: str = "blob"
    drift_px: float = 1.5
    radius_range: tuple[float, float] = (12.0, 22.0)
    noise_level: float = 0.08
    contrast: float = 0.35
    seed: int = 0

    def __post_init__(self) -> None:
        h, w, c = self.shape
        if h < 8 or w < 8 or c < 2:
            raise ValidationError(f"volume shape {self.shape} too small")
        if self.kind not in TARGET_KINDS:
            raise ValidationError(f"kind must be one of {TARGET_KINDS}, got {self.kind!r}")
        r_lo, r_hi = self.radius_range
        if not (0 < r_lo <= r_hi):
            raise ValidationError(f"invalid radius range {self.radius_range}")
        # the blob boundary can reach 1.35x the nominal radius; keep it in frame
        if 1.35 * r_hi >= min(h, w) / 2 - 1:
            raise ValidationError(
                f"max radius {r_hi} cannot fit inside a {h}x{w} slice")
        if self.drift_px < 0 or self.noise_level < 0:
            raise ValidationError("drift and noise must be >= 0")
        if not (0 < self.contrast <= 1):
            raise ValidationError("contrast must lie in (0, 1]")


def _render(kind: str, h: int, w: int, center: np.ndarray, radius: float,
            aspect: float, angle: float, harmonics) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy - center[0]
    dx = xx - center[1]
    if kind == "disk":
        return dy * dy + dx * dx <= radius * radius
    if kind == "ellipse":
        ca, sa = np.cos(angle), np.sin(angle)
        u = ca * dy + sa * dx
        v = -sa * dy + ca * dx
        return (u / (radius * aspect)) ** 2 + (v / (radius / aspect)) ** 2 <= 1.0
    # blob: disk with a smooth angular perturbation of the boundary radius
    phi = np.arctan2(dy, dx)
    wobble = np.zeros_like(phi)
    for k, amp, phase in harmonics:
        wobble += amp * np.sin(k * phi + phase)
    local_r = radius * (1.0 + wobble)
    return dy * dy + dx * dx <= local_r * local_r


def generate_synthetic_volume(spec: SyntheticVolumeSpec) -> tuple[Volume, np.ndarray]:
    """Render one volume; returns (Volume, binary gt of the same shape)."""
    h, w, c = spec.shape
    rng = np.random.default_rng(spec.seed)
    r_lo, r_hi = spec.radius_range

    radius = float(rng.uniform(r_lo, r_hi))
    margin = 1.35 * r_hi + 1
    center = np.array([
        rng.uniform(margin, h - margin) if h > 2 * margin else h / 2,
        rng.uniform(margin, w - margin) if w > 2 * margin else w / 2,
    ])
    aspect = float(rng.uniform(0.7, 1.3))
    angle = float(rng.uniform(0, np.pi))
    harmonics = [(int(k), float(rng.uniform(0.05, 0.5 / k)), float(rng.uniform(0, 2 * np.pi)))
                 for k in (2, 3, 5)]

    base = 0.30
    voxels = np.empty((h, w, c), dtype=np.float32)
    gt = np.empty((h, w, c), dtype=np.uint8)
    for k in range(c):
        mask = _render(spec.kind, h, w, center, radius, aspect, angle, harmonics)
        img = np.full((h, w), base, dtype=np.float32)
        img[mask] += spec.contrast
        if spec.noise_level > 0:
            img += rng.normal(0.0, spec.noise_level, size=(h, w)).astype(np.float32)
        voxels[:, :, k] = np.clip(img, 0.0, 1.0)
        gt[:, :, k] = mask.astype(np.uint8)

        if spec.drift_px > 0:
            center = center + rng.uniform(-spec.drift_px, spec.drift_px, size=2)
            lo = np.array([margin, margin])
            hi = np.array([h - margin, w - margin])
            center = np.clip(center, np.minimum(lo, hi), np.maximum(lo, hi))
            radius = float(np.clip(radius + rng.uniform(-spec.drift_px / 2, spec.drift_px / 2),
                                   r_lo, r_hi))

    volume = Volume(voxels=voxels, identifier=f"synthetic-{spec.kind}-{spec.seed}")
    return volume, gt


def generate_dataset(count: int, base_spec: SyntheticVolumeSpec | None = None,
                     seed: int = 0) -> list[tuple[Volume, np.ndarray]]:
    """A list of volumes of base_spec's kind, one derived seed per volume."""
    if count < 1:
        raise ValidationError("dataset size must be >= 1")
    base = base_spec or SyntheticVolumeSpec()
    out = []
    for i in range(count):
        spec = SyntheticVolumeSpec(shape=base.shape, kind=base.kind, drift_px=base.drift_px,
                                   radius_range=base.radius_range,
                                   noise_level=base.noise_level, contrast=base.contrast,
                                   seed=seed * 100003 + i)
        out.append(generate_synthetic_volume(spec))
    return out

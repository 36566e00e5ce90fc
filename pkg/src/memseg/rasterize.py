"""Rasterization of guidance geometry into binary guidance maps.

The wire format sends geometry in volume-pixel coordinates (row, col) and
the server rasterizes it. The rules here are deliberately simple integer
arithmetic (half-up rounding, Bresenham lines, square brushes) so that a
client-side implementation can reproduce them pixel for pixel; the golden
fixtures under fixtures/rasterization pin the behaviour.
"""

from __future__ import annotations

import math

import numpy as np

from .data import GuidanceMap

DEFAULT_SCRIBBLE_THICKNESS = 3
DEFAULT_POINT_THICKNESS = 3


class GeometryError(ValueError):
    """Malformed guidance geometry; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _round_half_up(v: float) -> int:
    return int(math.floor(float(v) + 0.5))


def _as_points(raw, field: str, minimum: int, exact: int | None = None) -> list[tuple[int, int]]:
    if not isinstance(raw, (list, tuple)):
        raise GeometryError(field, "expected a list of [row, col] pairs")
    pts = []
    for i, item in enumerate(raw):
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise GeometryError(field, f"entry {i} is not a [row, col] pair")
        r, c = item
        if not isinstance(r, (int, float)) or not isinstance(c, (int, float)):
            raise GeometryError(field, f"entry {i} has non-numeric coordinates")
        if not (math.isfinite(r) and math.isfinite(c)):
            raise GeometryError(field, f"entry {i} has non-finite coordinates")
        pts.append((_round_half_up(r), _round_half_up(c)))
    if exact is not None and len(pts) != exact:
        raise GeometryError(field, f"expected exactly {exact} points, got {len(pts)}")
    if len(pts) < minimum:
        raise GeometryError(field, f"expected at least {minimum} points, got {len(pts)}")
    return pts


def _stamp_brush(canvas: np.ndarray, r: int, c: int, radius: int) -> None:
    h, w = canvas.shape
    r0, r1 = max(0, r - radius), min(h, r + radius + 1)
    c0, c1 = max(0, c - radius), min(w, c + radius + 1)
    if r0 < r1 and c0 < c1:
        canvas[r0:r1, c0:c1] = 1


def _draw_segment(canvas: np.ndarray, p0: tuple[int, int], p1: tuple[int, int], radius: int) -> None:
    # Bresenham over (row, col)
    r0, c0 = p0
    r1, c1 = p1
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dr - dc
    while True:
        _stamp_brush(canvas, r0, c0, radius)
        if r0 == r1 and c0 == c1:
            break
        e2 = 2 * err
        if e2 > -dc:
            err -= dc
            r0 += sr
        if e2 < dr:
            err += dr
            c0 += sc
    _stamp_brush(canvas, r1, c1, radius)


def rasterize_scribble(points, shape: tuple[int, int], thickness: int = DEFAULT_SCRIBBLE_THICKNESS) -> np.ndarray:
    pts = _as_points(points, "points", minimum=2)
    if thickness < 1:
        raise GeometryError("thickness", f"must be >= 1, got {thickness}")
    canvas = np.zeros(shape, dtype=np.uint8)
    radius = (thickness - 1) // 2
    for a, b in zip(pts[:-1], pts[1:]):
        _draw_segment(canvas, a, b, radius)
    return canvas


def rasterize_box(corners, shape: tuple[int, int]) -> np.ndarray:
    pts = _as_points(corners, "corners", minimum=2, exact=2)
    (r0, c0), (r1, c1) = pts
    rmin, rmax = sorted((r0, r1))
    cmin, cmax = sorted((c0, c1))
    h, w = shape
    rmin, rmax = max(0, rmin), min(h - 1, rmax)
    cmin, cmax = max(0, cmin), min(w - 1, cmax)
    canvas = np.zeros(shape, dtype=np.uint8)
    if rmin <= rmax and cmin <= cmax:
        canvas[rmin : rmax + 1, cmin : cmax + 1] = 1
    return canvas


def rasterize_extreme_points(points, shape: tuple[int, int], thickness: int = DEFAULT_POINT_THICKNESS) -> np.ndarray:
    pts = _as_points(points, "points", minimum=4, exact=4)
    canvas = np.zeros(shape, dtype=np.uint8)
    radius = (thickness - 1) // 2
    for r, c in pts:
        _stamp_brush(canvas, r, c, radius)
    return canvas


def rasterize_geometry(interaction_type: str, geometry: dict, shape: tuple[int, int], slice_index: int) -> GuidanceMap:
    """Turn a wire-format geometry payload into a validated GuidanceMap."""
    if not isinstance(geometry, dict):
        raise GeometryError("geometry", "expected an object")
    if interaction_type == "scribble":
        thickness = geometry.get("thickness", DEFAULT_SCRIBBLE_THICKNESS)
        if not isinstance(thickness, int):
            raise GeometryError("thickness", "must be an integer")
        pixels = rasterize_scribble(geometry.get("points"), shape, thickness)
    elif interaction_type == "bounding_box":
        pixels = rasterize_box(geometry.get("corners"), shape)
    elif interaction_type == "extreme_points":
        thickness = geometry.get("thickness", DEFAULT_POINT_THICKNESS)
        if not isinstance(thickness, int):
            raise GeometryError("thickness", "must be an integer")
        pixels = rasterize_extreme_points(geometry.get("points"), shape, thickness)
    else:
        raise GeometryError("type", f"unknown interaction type {interaction_type!r}")
    if not pixels.any():
        raise GeometryError("geometry", "rasterized guidance is empty (outside the image?)")
    return GuidanceMap(pixels, interaction_type, slice_index)

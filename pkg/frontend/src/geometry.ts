/**
 * Guidance geometry helpers: client-side validation and polyline
 * simplification. Validation rejects bad geometry before any request is
 * sent; the server applies the same rules again on its side.
 */

import type { GeometryPayload, InteractionType } from "./rasterize.js";

export type VolumePoint = [number, number];

/** Human-readable reason a guidance payload is not submittable, or null. */
export function validationError(
  tool: InteractionType,
  points: readonly VolumePoint[],
): string | null {
  if (tool === "scribble") {
    if (points.length < 2) {
      return "a scribble needs at least 2 points";
    }
  } else if (tool === "bounding_box") {
    if (points.length !== 2) {
      return "a box needs exactly 2 corners";
    }
  } else if (tool === "extreme_points") {
    if (points.length !== 4) {
      return `extreme points need exactly 4 points, got ${points.length}`;
    }
  }
  return null;
}

function perpendicularDistance(p: VolumePoint, a: VolumePoint, b: VolumePoint): number {
  const dr = b[0] - a[0];
  const dc = b[1] - a[1];
  const lengthSq = dr * dr + dc * dc;
  if (lengthSq === 0) {
    return Math.hypot(p[0] - a[0], p[1] - a[1]);
  }
  return Math.abs(dr * (a[1] - p[1]) - dc * (a[0] - p[0])) / Math.sqrt(lengthSq);
}

/**
 * Ramer–Douglas–Peucker simplification. Pointer-move sampling produces
 * dense polylines; dropping points within `tolerance` pixels of the chord
 * bounds the payload without visibly changing the stroke.
 */
export function simplifyPolyline(
  points: readonly VolumePoint[],
  tolerance = 1.0,
): VolumePoint[] {
  if (points.length <= 2) {
    return points.slice();
  }
  const first = points[0]!;
  const last = points[points.length - 1]!;
  let worst = 0;
  let worstIndex = 0;
  for (let i = 1; i + 1 < points.length; i++) {
    const d = perpendicularDistance(points[i]!, first, last);
    if (d > worst) {
      worst = d;
      worstIndex = i;
    }
  }
  if (worst <= tolerance) {
    return [first, last];
  }
  const head = simplifyPolyline(points.slice(0, worstIndex + 1), tolerance);
  const tail = simplifyPolyline(points.slice(worstIndex), tolerance);
  return head.slice(0, -1).concat(tail);
}

/** Build the wire-format geometry object for a validated point list. */
export function buildGeometry(
  tool: InteractionType,
  points: readonly VolumePoint[],
  thickness?: number,
): GeometryPayload {
  const err = validationError(tool, points);
  if (err !== null) {
    throw new Error(err);
  }
  if (tool === "bounding_box") {
    return { corners: points.map((p) => [p[0], p[1]]) };
  }
  const coords =
    tool === "scribble" ? simplifyPolyline(points) : points.slice();
  const geometry: GeometryPayload = { points: coords.map((p) => [p[0], p[1]]) };
  if (thickness !== undefined) {
    geometry.thickness = thickness;
  }
  return geometry;
}

/**
 * Client-side rasterization of guidance geometry.
 *
 * This mirrors the server's rules pixel for pixel: half-up rounding of
 * fractional coordinates, Bresenham line segments, square brushes of
 * radius (thickness - 1) / 2, and inclusive clamped box fills. The golden
 * fixtures under fixtures/rasterization pin both implementations to the
 * same output, which is what lets the UI preview a stroke locally while
 * the server remains the source of truth for the stored guidance map.
 */

export type InteractionType = "scribble" | "bounding_box" | "extreme_points";

export const DEFAULT_SCRIBBLE_THICKNESS = 3;
export const DEFAULT_POINT_THICKNESS = 3;

/** Row-major binary raster. */
export interface Raster {
  data: Uint8Array;
  height: number;
  width: number;
}

export class GeometryError extends Error {
  readonly field: string;

  constructor(field: string, message: string) {
    super(`${field}: ${message}`);
    this.field = field;
    this.name = "GeometryError";
  }
}

export function roundHalfUp(v: number): number {
  return Math.floor(v + 0.5);
}

type Point = [number, number];

function asPoints(
  raw: unknown,
  field: string,
  minimum: number,
  exact?: number,
): Point[] {
  if (!Array.isArray(raw)) {
    throw new GeometryError(field, "expected a list of [row, col] pairs");
  }
  const pts: Point[] = [];
  for (let i = 0; i < raw.length; i++) {
    const item = raw[i];
    if (!Array.isArray(item) || item.length !== 2) {
      throw new GeometryError(field, `entry ${i} is not a [row, col] pair`);
    }
    const [r, c] = item as [unknown, unknown];
    if (typeof r !== "number" || typeof c !== "number") {
      throw new GeometryError(field, `entry ${i} has non-numeric coordinates`);
    }
    if (!Number.isFinite(r) || !Number.isFinite(c)) {
      throw new GeometryError(field, `entry ${i} has non-finite coordinates`);
    }
    pts.push([roundHalfUp(r), roundHalfUp(c)]);
  }
  if (exact !== undefined && pts.length !== exact) {
    throw new GeometryError(field, `expected exactly ${exact} points, got ${pts.length}`);
  }
  if (pts.length < minimum) {
    throw new GeometryError(field, `expected at least ${minimum} points, got ${pts.length}`);
  }
  return pts;
}

function emptyRaster(height: number, width: number): Raster {
  return { data: new Uint8Array(height * width), height, width };
}

function stampBrush(canvas: Raster, r: number, c: number, radius: number): void {
  const r0 = Math.max(0, r - radius);
  const r1 = Math.min(canvas.height, r + radius + 1);
  const c0 = Math.max(0, c - radius);
  const c1 = Math.min(canvas.width, c + radius + 1);
  for (let row = r0; row < r1; row++) {
    canvas.data.fill(1, row * canvas.width + c0, row * canvas.width + c1);
  }
}

function drawSegment(canvas: Raster, p0: Point, p1: Point, radius: number): void {
  let [r0, c0] = p0;
  const [r1, c1] = p1;
  const dr = Math.abs(r1 - r0);
  const dc = Math.abs(c1 - c0);
  const sr = r0 < r1 ? 1 : -1;
  const sc = c0 < c1 ? 1 : -1;
  let err = dr - dc;
  for (;;) {
    stampBrush(canvas, r0, c0, radius);
    if (r0 === r1 && c0 === c1) {
      break;
    }
    const e2 = 2 * err;
    if (e2 > -dc) {
      err -= dc;
      r0 += sr;
    }
    if (e2 < dr) {
      err += dr;
      c0 += sc;
    }
  }
  stampBrush(canvas, r1, c1, radius);
}

export function rasterizeScribble(
  points: unknown,
  shape: [number, number],
  thickness: number = DEFAULT_SCRIBBLE_THICKNESS,
): Raster {
  const pts = asPoints(points, "points", 2);
  if (thickness < 1) {
    throw new GeometryError("thickness", `must be >= 1, got ${thickness}`);
  }
  const canvas = emptyRaster(shape[0], shape[1]);
  const radius = Math.floor((thickness - 1) / 2);
  for (let i = 0; i + 1 < pts.length; i++) {
    drawSegment(canvas, pts[i]!, pts[i + 1]!, radius);
  }
  return canvas;
}

export function rasterizeBox(corners: unknown, shape: [number, number]): Raster {
  const pts = asPoints(corners, "corners", 2, 2);
  const [[ra, ca], [rb, cb]] = pts as [Point, Point];
  const rmin = Math.max(0, Math.min(ra, rb));
  const rmax = Math.min(shape[0] - 1, Math.max(ra, rb));
  const cmin = Math.max(0, Math.min(ca, cb));
  const cmax = Math.min(shape[1] - 1, Math.max(ca, cb));
  const canvas = emptyRaster(shape[0], shape[1]);
  if (rmin <= rmax && cmin <= cmax) {
    for (let row = rmin; row <= rmax; row++) {
      canvas.data.fill(1, row * canvas.width + cmin, row * canvas.width + cmax + 1);
    }
  }
  return canvas;
}

export function rasterizeExtremePoints(
  points: unknown,
  shape: [number, number],
  thickness: number = DEFAULT_POINT_THICKNESS,
): Raster {
  const pts = asPoints(points, "points", 4, 4);
  const canvas = emptyRaster(shape[0], shape[1]);
  const radius = Math.floor((thickness - 1) / 2);
  for (const [r, c] of pts) {
    stampBrush(canvas, r, c, radius);
  }
  return canvas;
}

export interface GeometryPayload {
  points?: unknown;
  corners?: unknown;
  thickness?: unknown;
}

/** Rasterize a wire-format geometry payload, validating as the server does. */
export function rasterizeGeometry(
  interactionType: string,
  geometry: GeometryPayload,
  shape: [number, number],
): Raster {
  if (typeof geometry !== "object" || geometry === null || Array.isArray(geometry)) {
    throw new GeometryError("geometry", "expected an object");
  }
  let raster: Raster;
  if (interactionType === "scribble") {
    const thickness = geometry.thickness ?? DEFAULT_SCRIBBLE_THICKNESS;
    if (typeof thickness !== "number" || !Number.isInteger(thickness)) {
      throw new GeometryError("thickness", "must be an integer");
    }
    raster = rasterizeScribble(geometry.points, shape, thickness);
  } else if (interactionType === "bounding_box") {
    raster = rasterizeBox(geometry.corners, shape);
  } else if (interactionType === "extreme_points") {
    const thickness = geometry.thickness ?? DEFAULT_POINT_THICKNESS;
    if (typeof thickness !== "number" || !Number.isInteger(thickness)) {
      throw new GeometryError("thickness", "must be an integer");
    }
    raster = rasterizeExtremePoints(geometry.points, shape, thickness);
  } else {
    throw new GeometryError("type", `unknown interaction type ${JSON.stringify(interactionType)}`);
  }
  if (!raster.data.some((v) => v !== 0)) {
    throw new GeometryError("geometry", "rasterized guidance is empty (outside the image?)");
  }
  return raster;
}

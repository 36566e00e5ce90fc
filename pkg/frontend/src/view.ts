/**
 * Coordinate mapping between canvas pixels and volume pixels.
 *
 * Volume coordinates are (row, col) with row 0 at the top, matching the
 * server's rasterization; canvas coordinates are (x, y) in CSS pixels.
 * The transform is a uniform zoom plus a pan offset, so the mapping
 * round-trips exactly up to floating-point error.
 */

export interface CanvasPoint {
  x: number;
  y: number;
}

export interface VolumeCoord {
  row: number;
  col: number;
}

export class ViewTransform {
  zoom: number;
  panX: number;
  panY: number;

  constructor(zoom = 1.0, panX = 0.0, panY = 0.0) {
    if (!(zoom > 0)) {
      throw new Error(`zoom must be positive, got ${zoom}`);
    }
    this.zoom = zoom;
    this.panX = panX;
    this.panY = panY;
  }

  canvasToVolume(p: CanvasPoint): VolumeCoord {
    return {
      row: (p.y - this.panY) / this.zoom,
      col: (p.x - this.panX) / this.zoom,
    };
  }

  volumeToCanvas(v: VolumeCoord): CanvasPoint {
    return {
      x: v.col * this.zoom + this.panX,
      y: v.row * this.zoom + this.panY,
    };
  }

  /** Zoom about a fixed canvas point so the pixel under the cursor stays put. */
  zoomAbout(factor: number, anchor: CanvasPoint): void {
    const before = this.canvasToVolume(anchor);
    this.zoom *= factor;
    const after = this.volumeToCanvas(before);
    this.panX += anchor.x - after.x;
    this.panY += anchor.y - after.y;
  }

  /** Fit an h-by-w slice into a canvas, centered. */
  static fit(h: number, w: number, canvasW: number, canvasH: number): ViewTransform {
    const zoom = Math.min(canvasW / w, canvasH / h);
    return new ViewTransform(
      zoom,
      (canvasW - w * zoom) / 2,
      (canvasH - h * zoom) / 2,
    );
  }
}

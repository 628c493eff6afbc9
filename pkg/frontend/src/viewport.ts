/** Canvas <-> image coordinate mapping under zoom and pan.
 *
 * The transform is a pure similarity (uniform scale + translation), so a
 * marker placed through canvasToImage and redrawn through imageToCanvas
 * lands on the same canvas pixel at any zoom level. Annotation accuracy
 * feeds straight into triangulation residuals, which is why this mapping
 * is kept exact rather than snapped to device pixels.
 */

export interface Point {
  x: number;
  y: number;
}

export class Viewport {
  scale = 1;
  tx = 0;
  ty = 0;

  constructor(
    readonly minScale = 0.05,
    readonly maxScale = 32,
  ) {}

  /** Fit the image inside the view and center it. */
  fit(viewW: number, viewH: number, imgW: number, imgH: number): void {
    if (imgW <= 0 || imgH <= 0 || viewW <= 0 || viewH <= 0) return;
    this.scale = this.clampScale(Math.min(viewW / imgW, viewH / imgH));
    this.tx = (viewW - imgW * this.scale) / 2;
    this.ty = (viewH - imgH * this.scale) / 2;
  }

  imageToCanvas(p: Point): Point {
    return { x: p.x * this.scale + this.tx, y: p.y * this.scale + this.ty };
  }

  canvasToImage(p: Point): Point {
    return { x: (p.x - this.tx) / this.scale, y: (p.y - this.ty) / this.scale };
  }

  /** Zoom by `factor`, keeping the canvas point `anchor` on the same image point. */
  zoomAt(anchor: Point, factor: number): void {
    const next = this.clampScale(this.scale * factor);
    if (next === this.scale) return;
    const pivot = this.canvasToImage(anchor);
    this.scale = next;
    this.tx = anchor.x - pivot.x * this.scale;
    this.ty = anchor.y - pivot.y * this.scale;
  }

  pan(dx: number, dy: number): void {
    this.tx += dx;
    this.ty += dy;
  }

  private clampScale(s: number): number {
    return Math.min(this.maxScale, Math.max(this.minScale, s));
  }
}

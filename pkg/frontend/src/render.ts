/** Canvas drawing for the annotate and review views. */

import { keypointColor, LEVEL_COLORS } from "./colors.js";
import type { Placement } from "./state.js";
import type { Viewport } from "./viewport.js";
import type { OverlayResponse } from "./types.js";

export interface MarkerStyle {
  radius: number;
  label: boolean;
}

export function drawImage(
  ctx: CanvasRenderingContext2D,
  viewport: Viewport,
  image: CanvasImageSource,
  imgW: number,
  imgH: number,
): void {
  ctx.save();
  ctx.imageSmoothingEnabled = viewport.scale < 4;
  ctx.setTransform(viewport.scale, 0, 0, viewport.scale, viewport.tx, viewport.ty);
  ctx.drawImage(image, 0, 0, imgW, imgH);
  ctx.restore();
}

export function drawPlacements(
  ctx: CanvasRenderingContext2D,
  viewport: Viewport,
  placements: ReadonlyMap<string, Placement>,
  keypointIds: string[],
  selected: string | null,
): void {
  for (const [kid, p] of placements) {
    const c = viewport.imageToCanvas({ x: p.u, y: p.v });
    const color = keypointColor(keypointIds.indexOf(kid), keypointIds.length);
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    ctx.lineWidth = kid === selected ? 2.5 : 1.5;
    ctx.beginPath();
    ctx.arc(c.x, c.y, 6, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(c.x - 9, c.y);
    ctx.lineTo(c.x + 9, c.y);
    ctx.moveTo(c.x, c.y - 9);
    ctx.lineTo(c.x, c.y + 9);
    ctx.stroke();
    ctx.font = "11px sans-serif";
    ctx.fillText(kid, c.x + 8, c.y - 8);
  }
}

export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  viewport: Viewport,
  overlay: OverlayResponse,
  keypointIds: string[],
): void {
  const a = viewport.imageToCanvas({ x: overlay.bbox.x_min, y: overlay.bbox.y_min });
  const b = viewport.imageToCanvas({ x: overlay.bbox.x_max, y: overlay.bbox.y_max });
  ctx.strokeStyle = "#29b6f6";
  ctx.lineWidth = 1.5;
  ctx.strokeRect(a.x, a.y, b.x - a.x, b.y - a.y);

  for (const kp of overlay.keypoints) {
    const c = viewport.imageToCanvas({ x: kp.u, y: kp.v });
    const color = keypointColor(keypointIds.indexOf(kp.id), keypointIds.length);
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    ctx.globalAlpha = kp.visible ? 1.0 : 0.35;
    ctx.beginPath();
    ctx.arc(c.x, c.y, 4, 0, 2 * Math.PI);
    if (kp.visible) ctx.fill();
    else ctx.stroke();
    ctx.font = "10px sans-serif";
    ctx.fillText(kp.id, c.x + 6, c.y - 6);
    ctx.globalAlpha = 1.0;
  }
}

/** Magnifier around the cursor for sub-pixel clicking. */
export function drawLoupe(
  ctx: CanvasRenderingContext2D,
  image: CanvasImageSource,
  imagePoint: { x: number; y: number },
  size = 120,
  magnification = 8,
): void {
  const half = size / (2 * magnification);
  ctx.save();
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, size, size);
  ctx.drawImage(
    image,
    imagePoint.x - half,
    imagePoint.y - half,
    2 * half,
    2 * half,
    0,
    0,
    size,
    size,
  );
  ctx.strokeStyle = "#ff3355";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(size / 2, 0);
  ctx.lineTo(size / 2, size);
  ctx.moveTo(0, size / 2);
  ctx.lineTo(size, size / 2);
  ctx.stroke();
  ctx.restore();
}

export function badgeColor(level: "green" | "amber" | "red" | null): string {
  return level ? LEVEL_COLORS[level] : "#777";
}

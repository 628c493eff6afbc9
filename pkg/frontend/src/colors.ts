/** Stable keypoint palette colors and residual badge styling. */

import type { ResidualLevel } from "./state.js";

export function keypointColor(index: number, total: number): string {
  const hue = Math.round((360 * index) / Math.max(total, 1));
  return `hsl(${hue}, 75%, 55%)`;
}

export const LEVEL_COLORS: Record<ResidualLevel, string> = {
  green: "#2e9e44",
  amber: "#d9a021",
  red: "#cc3b2f",
};

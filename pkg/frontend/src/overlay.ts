/**
 * Render-agnostic overlay model: one cell per grid block with a visual state.
 *
 * Convention follows the localization figures: flagged (dissimilar) blocks
 * get a red tint, the reference block a green outline. Unreliable blocks are
 * hatched gray so the analyst knows they cannot anchor a comparison.
 */

import { SessionState, flaggedMask, referenceFlat } from "./state.js";

export type CellPaint = "reference" | "flagged" | "clear";

export interface OverlayCell {
  row: number;
  col: number;
  x: number;
  y: number;
  size: number;
  paint: CellPaint;
  reliable: boolean;
}

export const OVERLAY_COLORS = {
  flaggedFill: "rgba(220, 53, 53, 0.40)",
  referenceOutline: "#22c55e",
  unreliableFill: "rgba(128, 128, 128, 0.35)",
} as const;

export function buildOverlay(state: SessionState): OverlayCell[] {
  const grid = state.grid;
  if (!grid) return [];
  const flags = flaggedMask(state);
  const ref = referenceFlat(state);
  const cells: OverlayCell[] = [];
  for (let r = 0; r < grid.rows; r++) {
    for (let c = 0; c < grid.cols; c++) {
      const flat = r * grid.cols + c;
      const paint: CellPaint = flat === ref ? "reference" : flags[flat] ? "flagged" : "clear";
      cells.push({
        row: r,
        col: c,
        x: c * grid.stride,
        y: r * grid.stride,
        size: grid.block_size,
        paint,
        reliable: state.reliable[flat] ?? true,
      });
    }
  }
  return cells;
}

/**
 * Grid rendering: a pure view model derived from spec, cells, and
 * overlay state, plus the canvas painter that draws it.
 *
 * The view is top-down 2D: each cell is filled with its registry color,
 * darkened with building height; overlays draw shade hatching, access
 * tinting, and comment-count dots on top.  The view model carries every
 * visual decision so tests can compare renderings cell for cell without
 * a canvas.
 */

import { Cell, TableSpec, cellCount, effectiveFloors } from "./wire.js";

export interface CellView {
  fill: string;
  /** Meters; drives the darkening already baked into fill. */
  height_m: number;
  shaded: boolean;
  /** Access seconds, when the overlay is on and the layer covers it. */
  access_s: number | null;
  comment_count: number;
}

export interface OverlayInputs {
  shadow?: boolean[];
  access?: number[];
  heatmap?: number[];
}

/** Height shading: full color at ground level, down to 45% for towers. */
function shadeFor(heightM: number): number {
  const t = Math.min(heightM / 120, 1);
  return 1 - 0.55 * t;
}

export function cellFill(spec: TableSpec, cell: Cell): string {
  const entry = spec.registry[cell.type_id];
  const height = entry.category === "building"
    ? effectiveFloors(spec, cell) * spec.floor_height_m
    : 0;
  const k = shadeFor(height);
  const [r, g, b] = entry.color;
  return `rgb(${Math.round(r * k)},${Math.round(g * k)},${Math.round(b * k)})`;
}

export function viewModel(
  spec: TableSpec, grid: Cell[], overlays: OverlayInputs = {},
): CellView[] {
  const n = cellCount(spec);
  const out: CellView[] = [];
  for (let i = 0; i < n; i++) {
    const cell = grid[i];
    const entry = spec.registry[cell.type_id];
    const height = entry.category === "building"
      ? effectiveFloors(spec, cell) * spec.floor_height_m
      : 0;
    out.push({
      fill: cellFill(spec, cell),
      height_m: height,
      shaded: overlays.shadow?.[i] ?? false,
      access_s: overlays.access !== undefined && overlays.access[i] >= 0
        ? overlays.access[i]
        : null,
      comment_count: overlays.heatmap?.[i] ?? 0,
    });
  }
  return out;
}

export function drawGrid(
  ctx: CanvasRenderingContext2D,
  spec: TableSpec,
  views: CellView[],
  cellPx: number,
): void {
  const maxAccess = views.reduce(
    (m, v) => (v.access_s !== null && v.access_s > m ? v.access_s : m), 0,
  );
  for (let row = 0; row < spec.nrows; row++) {
    for (let col = 0; col < spec.ncols; col++) {
      const v = views[row * spec.ncols + col];
      const x = col * cellPx;
      const y = row * cellPx;
      ctx.fillStyle = v.fill;
      ctx.fillRect(x, y, cellPx, cellPx);
      if (v.access_s !== null && maxAccess > 0) {
        // quicker access glows warmer
        const t = 1 - v.access_s / maxAccess;
        ctx.fillStyle = `rgba(255,140,0,${(0.12 + 0.38 * t).toFixed(3)})`;
        ctx.fillRect(x, y, cellPx, cellPx);
      }
      if (v.shaded) {
        ctx.fillStyle = "rgba(20,20,60,0.45)";
        ctx.fillRect(x, y, cellPx, cellPx);
      }
      if (v.comment_count > 0) {
        const r = Math.min(3 + v.comment_count, cellPx / 3);
        ctx.fillStyle = "rgba(255,230,80,0.9)";
        ctx.beginPath();
        ctx.arc(x + cellPx - r - 2, y + r + 2, r, 0, 2 * Math.PI);
        ctx.fill();
      }
      ctx.strokeStyle = "rgba(0,0,0,0.25)";
      ctx.strokeRect(x + 0.5, y + 0.5, cellPx - 1, cellPx - 1);
    }
  }
}

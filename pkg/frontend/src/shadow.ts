/**
 * Client-side building heights and sun shadows.
 *
 * The sun overlay is interactive, so the mask is computed in the browser
 * rather than round-tripping through an analysis worker.  The algorithm
 * is the same exact grid traversal the server uses, verified against
 * shared golden fixtures, so the two implementations cannot drift.
 */

import { Cell, TableSpec, categoryOf, effectiveFloors } from "./wire.js";

export interface SunPosition {
  azimuth_deg: number;
  elevation_deg: number;
}

export function checkSun(sun: SunPosition): void {
  const { azimuth_deg: az, elevation_deg: el } = sun;
  if (!Number.isFinite(az) || az < 0 || az >= 360) {
    throw new RangeError(`azimuth_deg must be in [0, 360), got ${az}`);
  }
  if (!Number.isFinite(el) || el <= 0 || el > 90) {
    throw new RangeError(`elevation_deg must be in (0, 90], got ${el}`);
  }
}

/** Per-cell building height in meters; zero for non-building cells. */
export function buildingHeights(grid: Cell[], spec: TableSpec): number[] {
  return grid.map((cell) =>
    categoryOf(spec, cell) === "building"
      ? effectiveFloors(spec, cell) * spec.floor_height_m
      : 0,
  );
}

/**
 * Every cell the ray from (cx, cy) toward (dx, dy) passes through, with
 * the entry distance in cell units, nearest first.  Exact traversal, so
 * the result does not depend on any sampling step.
 */
function* rayCells(
  cx: number, cy: number, dx: number, dy: number, ncols: number, nrows: number,
): Generator<[number, number, number]> {
  let col = Math.floor(cx);
  let row = Math.floor(cy);
  let stepX: number, tmaxX: number, tdeltaX: number;
  let stepY: number, tmaxY: number, tdeltaY: number;
  if (dx > 0) {
    stepX = 1; tmaxX = (col + 1 - cx) / dx; tdeltaX = 1 / dx;
  } else if (dx < 0) {
    stepX = -1; tmaxX = (col - cx) / dx; tdeltaX = -1 / dx;
  } else {
    stepX = 0; tmaxX = Infinity; tdeltaX = Infinity;
  }
  if (dy > 0) {
    stepY = 1; tmaxY = (row + 1 - cy) / dy; tdeltaY = 1 / dy;
  } else if (dy < 0) {
    stepY = -1; tmaxY = (row - cy) / dy; tdeltaY = -1 / dy;
  } else {
    stepY = 0; tmaxY = Infinity; tdeltaY = Infinity;
  }
  for (;;) {
    let t: number;
    if (tmaxX < tmaxY) {
      t = tmaxX;
      tmaxX += tdeltaX;
      col += stepX;
    } else {
      t = tmaxY;
      tmaxY += tdeltaY;
      row += stepY;
    }
    if (!(col >= 0 && col < ncols && row >= 0 && row < nrows)) return;
    yield [col, row, t];
  }
}

/**
 * Boolean shade mask for a height field under the given sun.
 *
 * A cell is shaded when some other cell along the ray from its center
 * toward the sun is tall enough to block it: with d the center-to-center
 * ground distance, shaded iff height(blocker) >= d*tan(elevation) +
 * height(cell).  A cell never shades itself.  The march stops at the
 * grid edge or once no remaining cell could be tall enough.
 */
export function shadowMask(heights: number[], spec: TableSpec, sun: SunPosition): boolean[] {
  checkSun(sun);
  if (heights.length !== spec.ncols * spec.nrows) {
    throw new RangeError(
      `height field has ${heights.length} values, table has ${spec.ncols * spec.nrows} cells`,
    );
  }
  const { ncols, nrows, cell_size_m: s } = spec;
  const rad = Math.PI / 180;
  const tanE = Math.tan(sun.elevation_deg * rad);
  const maxH = heights.length > 0 ? Math.max(...heights) : 0;
  const dx = Math.sin(sun.azimuth_deg * rad);
  const dy = Math.cos(sun.azimuth_deg * rad);
  const mask: boolean[] = [];
  for (let row = 0; row < nrows; row++) {
    for (let col = 0; col < ncols; col++) {
      const hc = heights[row * ncols + col];
      let shaded = false;
      for (const [bc, br, tEntry] of rayCells(col + 0.5, row + 0.5, dx, dy, ncols, nrows)) {
        // the blocker's center is within one cell of the entry point
        if ((tEntry - 1) * s * tanE > maxH) break;
        if (bc === col && br === row) continue;
        const dc = bc - col;
        const dr = br - row;
        // the deltas are small integers, so the squared sum is exact and
        // the square root is correctly rounded on both implementations
        const d = s * Math.sqrt(dc * dc + dr * dr);
        if (heights[br * ncols + bc] >= d * tanE + hc) {
          shaded = true;
          break;
        }
      }
      mask.push(shaded);
    }
  }
  return mask;
}

import type { MapSlice } from "./protocol.js";

/** Decode the run-length-encoded occupancy slice into a flat row-major
 * Uint8Array (0 unknown, 1 free, 2 occupied). Returns the grid plus its
 * dimensions [nx, ny]. */
export function decodeSlice(slice: MapSlice): { grid: Uint8Array; nx: number; ny: number } {
  const nx = slice.rows.length;
  const ny = slice.width;
  const grid = new Uint8Array(nx * ny);
  for (let i = 0; i < nx; i++) {
    let j = 0;
    for (const [value, count] of slice.rows[i]) {
      grid.fill(value, i * ny + j, i * ny + j + count);
      j += count;
    }
    if (j !== ny) {
      throw new Error(`row ${i} decodes to ${j} cells, expected ${ny}`);
    }
  }
  return { grid, nx, ny };
}

export function encodeRow(row: Uint8Array | number[]): number[][] {
  const runs: number[][] = [];
  let j = 0;
  while (j < row.length) {
    const v = row[j];
    let j0 = j;
    while (j < row.length && row[j] === v) j++;
    runs.push([v, j - j0]);
  }
  return runs;
}

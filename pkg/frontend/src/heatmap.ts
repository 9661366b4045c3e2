/** Client-side heatmap normalization, kept in visual parity with the
 * service's PGM renderer: intensity = round(255 * |v| / max|v|), all-zero
 * maps render black. Channelled maps collapse by summing magnitudes. */

import type { ResultPayload } from "./types.js";

export interface Grid {
  height: number;
  width: number;
  /** Row-major intensities in 0..255. */
  pixels: Uint8ClampedArray;
}

export function mapToGrid(shape: number[], values: number[]): Grid {
  let height: number;
  let width: number;
  let magnitudes: number[];
  if (shape.length === 2) {
    [height, width] = shape;
    magnitudes = values.map(Math.abs);
  } else if (shape.length === 3) {
    const [channels, h, w] = shape;
    height = h;
    width = w;
    magnitudes = new Array<number>(h * w).fill(0);
    for (let ch = 0; ch < channels; ch++) {
      const base = ch * h * w;
      for (let i = 0; i < h * w; i++) {
        magnitudes[i] += Math.abs(values[base + i]);
      }
    }
  } else {
    throw new Error(`shape [${shape.join(",")}] has no 2-D rendering`);
  }
  const peak = magnitudes.reduce((a, b) => Math.max(a, b), 0);
  const pixels = new Uint8ClampedArray(height * width);
  if (peak > 0) {
    for (let i = 0; i < magnitudes.length; i++) {
      pixels[i] = Math.round((255 * magnitudes[i]) / peak);
    }
  }
  return { height, width, pixels };
}

/** Grids for every map in a result, in role order (single: one grid;
 * pair: left then right). */
export function resultGrids(result: ResultPayload): Grid[] {
  if (result.kind === "single") {
    return [mapToGrid(result.shape, result.values ?? [])];
  }
  if (result.kind === "pair") {
    return [
      mapToGrid(result.shape, result.left ?? []),
      mapToGrid(result.shape, result.right ?? []),
    ];
  }
  return (result.maps ?? []).map((m) => mapToGrid(result.shape, m));
}

/** Paint a grid onto a canvas as a translucent red overlay scaled to the
 * canvas size (nearest neighbour). */
export function paintOverlay(ctx: CanvasRenderingContext2D, grid: Grid, alpha = 0.65): void {
  const { width: cw, height: chh } = ctx.canvas;
  const cellW = cw / grid.width;
  const cellH = chh / grid.height;
  for (let r = 0; r < grid.height; r++) {
    for (let c = 0; c < grid.width; c++) {
      const v = grid.pixels[r * grid.width + c];
      if (v === 0) continue;
      ctx.fillStyle = `rgba(255, ${64 - Math.round(v / 8)}, 32, ${(alpha * v) / 255})`;
      ctx.fillRect(c * cellW, r * cellH, cellW, cellH);
    }
  }
}

/** Paint a grayscale input tensor (2-D or channelled) as the base image. */
export function paintInput(ctx: CanvasRenderingContext2D, shape: number[], data: number[]): void {
  const grid = mapToGrid(shape, data);
  const { width: cw, height: chh } = ctx.canvas;
  const cellW = cw / grid.width;
  const cellH = chh / grid.height;
  for (let r = 0; r < grid.height; r++) {
    for (let c = 0; c < grid.width; c++) {
      const v = grid.pixels[r * grid.width + c];
      ctx.fillStyle = `rgb(${v},${v},${v})`;
      ctx.fillRect(c * cellW, r * cellH, cellW, cellH);
    }
  }
}

/**
 * Before/after comparison math: masked residue heatmap and wipe geometry.
 * Pure functions over RGBA pixel buffers so they are testable without a DOM.
 */

export interface ResidueStats {
  /** RGBA overlay, red with alpha proportional to per-pixel residue. */
  heatmap: Uint8ClampedArray;
  /** Root mean square residue inside the mask, 0-255 scale. */
  rmseInMask: number;
}

export function residueHeatmap(
  before: Uint8ClampedArray,
  after: Uint8ClampedArray,
  mask: Uint8Array,
  width: number,
  height: number,
): ResidueStats {
  const n = width * height;
  if (before.length !== 4 * n || after.length !== 4 * n || mask.length !== n) {
    throw new Error("buffer sizes disagree with dimensions");
  }
  const heatmap = new Uint8ClampedArray(4 * n);
  let acc = 0;
  let count = 0;
  for (let i = 0; i < n; i++) {
    if (!mask[i]) continue;
    let sq = 0;
    let absSum = 0;
    for (let c = 0; c < 3; c++) {
      const d = before[4 * i + c] - after[4 * i + c];
      sq += d * d;
      absSum += Math.abs(d);
    }
    acc += sq / 3;
    count += 1;
    heatmap[4 * i] = 255;
    heatmap[4 * i + 3] = Math.min(255, Math.round(absSum / 3) * 3);
  }
  return {
    heatmap,
    rmseInMask: count ? Math.sqrt(acc / count) : 0,
  };
}

/** Column where the wipe splits: left of it shows `before`, right `after`. */
export function wipeSplitColumn(width: number, fraction: number): number {
  const f = Math.min(1, Math.max(0, fraction));
  return Math.round(f * width);
}

/**
 * Scanline even-odd polygon rasterizer.
 *
 * Line-for-line port of the server-side reference: pixel (i, j) is covered
 * iff its center (j + 0.5, i + 0.5) lies inside the polygon under even-odd
 * parity. Keeping both sides on the same algorithm makes client previews
 * match server-side mask rasterization pixel-exactly.
 */

export type Point = [number, number]; // (x, y)

export function rasterizePolygons(
  polygons: Point[][],
  h: number,
  w: number,
): Uint8Array {
  const out = new Uint8Array(h * w);
  const edges: Array<[number, number, number, number]> = [];
  for (const poly of polygons) {
    const n = poly.length;
    if (n < 3) continue;
    for (let a = 0; a < n; a++) {
      const [x1, y1] = poly[a];
      const [x2, y2] = poly[(a + 1) % n];
      edges.push([x1, y1, x2, y2]);
    }
  }
  if (!edges.length) return out;
  for (let i = 0; i < h; i++) {
    const y = i + 0.5;
    const xs: number[] = [];
    for (const [x1, y1, x2, y2] of edges) {
      if (y1 <= y !== y2 <= y) {
        const t = (y - y1) / (y2 - y1);
        xs.push(x1 + t * (x2 - x1));
      }
    }
    xs.sort((a, b) => a - b);
    for (let a = 0; a + 1 < xs.length; a += 2) {
      const j0 = Math.max(0, Math.ceil(xs[a] - 0.5));
      const j1 = Math.min(w, Math.ceil(xs[a + 1] - 0.5));
      for (let j = j0; j < j1; j++) out[i * w + j] = 1;
    }
  }
  return out;
}

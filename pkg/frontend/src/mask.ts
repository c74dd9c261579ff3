/**
 * Mask editing state: a single-channel 0/1 bitmap locked to the image
 * dimensions, disc-brush strokes, polygon fill, and exact undo.
 *
 * Brush stamps are the same disc structuring element the training pipeline
 * uses for mask morphology (dx^2 + dy^2 <= r^2 around an integer center),
 * keeping hand-drawn masks morphologically consistent with training masks.
 */

import { rasterizePolygons, type Point } from "./rasterize.js";

export type Tool = "brush" | "eraser" | "polygon";

const MAX_HISTORY = 64;

export class MaskCanvasState {
  readonly width: number;
  readonly height: number;
  tool: Tool = "brush";
  brushRadius = 8;
  dilationRadius = 0; // forwarded to the service as options.dilate_radius
  polygonVertices: Point[] = [];

  private mask: Uint8Array;
  private history: Uint8Array[] = [];

  constructor(width: number, height: number) {
    if (width <= 0 || height <= 0) {
      throw new Error(`invalid mask dimensions ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
    this.mask = new Uint8Array(width * height);
  }

  /** Read-only view of the bitmap; 1 = masked. */
  get bitmap(): Uint8Array {
    return this.mask;
  }

  isEmpty(): boolean {
    return !this.mask.some((v) => v !== 0);
  }

  maskedPixelCount(): number {
    let n = 0;
    for (const v of this.mask) n += v;
    return n;
  }

  /** Snapshot the bitmap before a mutating gesture so undo is exact. */
  beginStroke(): void {
    this.history.push(this.mask.slice());
    if (this.history.length > MAX_HISTORY) this.history.shift();
  }

  undo(): boolean {
    const prev = this.history.pop();
    if (!prev) return false;
    this.mask = prev;
    return true;
  }

  stampDisc(x: number, y: number, value: 0 | 1 = 1, radius = this.brushRadius): void {
    const cx = Math.round(x);
    const cy = Math.round(y);
    const r2 = radius * radius;
    const y0 = Math.max(0, cy - radius);
    const y1 = Math.min(this.height - 1, cy + radius);
    const x0 = Math.max(0, cx - radius);
    const x1 = Math.min(this.width - 1, cx + radius);
    for (let iy = y0; iy <= y1; iy++) {
      const dy = iy - cy;
      for (let ix = x0; ix <= x1; ix++) {
        const dx = ix - cx;
        if (dx * dx + dy * dy <= r2) this.mask[iy * this.width + ix] = value;
      }
    }
  }

  /** Stamp discs along a pointer segment so fast strokes leave no gaps. */
  strokeSegment(x0: number, y0: number, x1: number, y1: number, value: 0 | 1 = 1): void {
    const dist = Math.hypot(x1 - x0, y1 - y0);
    const steps = Math.max(1, Math.ceil(dist));
    for (let s = 0; s <= steps; s++) {
      const t = s / steps;
      this.stampDisc(x0 + t * (x1 - x0), y0 + t * (y1 - y0), value);
    }
  }

  addPolygonVertex(x: number, y: number): void {
    this.polygonVertices.push([x, y]);
  }

  /** Rasterize the in-progress polygon into the mask and reset it. */
  closePolygon(): boolean {
    if (this.polygonVertices.length < 3) {
      this.polygonVertices = [];
      return false;
    }
    this.beginStroke();
    const filled = rasterizePolygons([this.polygonVertices], this.height, this.width);
    for (let i = 0; i < filled.length; i++) {
      if (filled[i]) this.mask[i] = 1;
    }
    this.polygonVertices = [];
    return true;
  }

  clear(): void {
    this.beginStroke();
    this.mask.fill(0);
  }

  fillAll(): void {
    this.beginStroke();
    this.mask.fill(1);
  }
}

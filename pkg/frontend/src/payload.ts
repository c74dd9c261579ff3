/**
 * Mask export: serialize the canvas state into a /v1/remove payload.
 *
 * Bitmap masks go out as base64 single-channel PNG with values 0/255, so
 * the server's 0.5-threshold binarization reproduces the drawn bitmap
 * pixel-exactly. Polygon masks ship the raw vertex list; the server and the
 * client preview share one rasterization algorithm.
 */

import type { MaskCanvasState } from "./mask.js";
import type { Point } from "./rasterize.js";
import { bytesToBase64, decodeGrayPng, encodeGrayPng, base64ToBytes } from "./png.js";

export interface RemoveOptions {
  return_cbkg?: boolean;
  blind?: boolean;
  dilate_radius?: number;
}

export interface RemovePayload {
  image: string;
  mask?: string;
  polygons?: Point[][];
  options?: RemoveOptions;
}

export type MaskExport =
  | { kind: "bitmap"; mask: string }
  | { kind: "polygons"; polygons: Point[][] }
  | { kind: "empty" }; // caller must confirm blind mode before submitting

export function exportMask(state: MaskCanvasState, preferPolygons = false): MaskExport {
  if (preferPolygons && state.polygonVertices.length >= 3) {
    return { kind: "polygons", polygons: [state.polygonVertices.slice()] };
  }
  if (state.isEmpty()) {
    return { kind: "empty" };
  }
  const bytes = new Uint8Array(state.bitmap.length);
  for (let i = 0; i < bytes.length; i++) bytes[i] = state.bitmap[i] ? 255 : 0;
  const png = encodeGrayPng(bytes, state.width, state.height);
  return { kind: "bitmap", mask: bytesToBase64(png) };
}

/** Re-import an exported bitmap payload; value >= 128 maps back to 1. */
export function importMask(maskB64: string): { width: number; height: number; bitmap: Uint8Array } {
  const img = decodeGrayPng(base64ToBytes(maskB64));
  const bitmap = new Uint8Array(img.data.length);
  for (let i = 0; i < bitmap.length; i++) bitmap[i] = img.data[i] >= 128 ? 1 : 0;
  return { width: img.width, height: img.height, bitmap };
}

export function buildPayload(
  imageB64: string,
  exported: MaskExport,
  options: RemoveOptions = {},
): RemovePayload {
  if (exported.kind === "bitmap") {
    return { image: imageB64, mask: exported.mask, options };
  }
  if (exported.kind === "polygons") {
    return { image: imageB64, polygons: exported.polygons, options };
  }
  return { image: imageB64, options: { ...options, blind: true } };
}

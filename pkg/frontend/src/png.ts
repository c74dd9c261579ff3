/**
 * Minimal 8-bit grayscale PNG codec for mask payloads.
 *
 * The encoder emits stored (uncompressed) deflate blocks, which every PNG
 * reader accepts, so exported masks need no zlib dependency and are byte
 * deterministic. The decoder handles exactly the files this encoder writes
 * (bit depth 8, color type 0, filter 0, stored deflate) - enough for tests
 * and for re-importing previously exported masks.
 */

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (const b of bytes) c = CRC_TABLE[(c ^ b) & 0xff] ^ (c >>> 8);
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (const v of bytes) {
    a = (a + v) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32(value: number): number[] {
  return [(value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff];
}

function chunk(type: string, payload: Uint8Array): number[] {
  const typed = new Uint8Array(4 + payload.length);
  for (let i = 0; i < 4; i++) typed[i] = type.charCodeAt(i);
  typed.set(payload, 4);
  return [...u32(payload.length), ...typed, ...u32(crc32(typed))];
}

function storedZlib(raw: Uint8Array): Uint8Array {
  const parts: number[] = [0x78, 0x01]; // zlib header, no preset dict
  const blockMax = 65535;
  for (let off = 0; off < raw.length || off === 0; off += blockMax) {
    const len = Math.min(blockMax, raw.length - off);
    const final = off + len >= raw.length ? 1 : 0;
    parts.push(final, len & 0xff, (len >>> 8) & 0xff, ~len & 0xff, (~len >>> 8) & 0xff);
    for (let i = 0; i < len; i++) parts.push(raw[off + i]);
    if (final) break;
  }
  parts.push(...u32(adler32(raw)));
  return Uint8Array.from(parts);
}

/** Encode a 0..255 grayscale bitmap (row-major, h*w) as PNG bytes. */
export function encodeGrayPng(data: Uint8Array, width: number, height: number): Uint8Array {
  if (data.length !== width * height) {
    throw new Error(`data length ${data.length} != ${width}x${height}`);
  }
  const ihdr = Uint8Array.from([...u32(width), ...u32(height), 8, 0, 0, 0, 0]);
  const raw = new Uint8Array(height * (width + 1)); // filter byte 0 per row
  for (let y = 0; y < height; y++) {
    raw.set(data.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }
  return Uint8Array.from([
    ...SIGNATURE,
    ...chunk("IHDR", ihdr),
    ...chunk("IDAT", storedZlib(raw)),
    ...chunk("IEND", new Uint8Array(0)),
  ]);
}

export interface GrayImage {
  width: number;
  height: number;
  data: Uint8Array;
}

/** Decode PNGs produced by encodeGrayPng (stored deflate, filter 0 only). */
export function decodeGrayPng(bytes: Uint8Array): GrayImage {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG");
  }
  let off = 8;
  let width = 0;
  let height = 0;
  const idat: number[] = [];
  while (off < bytes.length) {
    const len = (bytes[off] << 24) | (bytes[off + 1] << 16) | (bytes[off + 2] << 8) | bytes[off + 3];
    const type = String.fromCharCode(...bytes.subarray(off + 4, off + 8));
    const payload = bytes.subarray(off + 8, off + 8 + len);
    if (type === "IHDR") {
      width = (payload[0] << 24) | (payload[1] << 16) | (payload[2] << 8) | payload[3];
      height = (payload[4] << 24) | (payload[5] << 16) | (payload[6] << 8) | payload[7];
      if (payload[8] !== 8 || payload[9] !== 0) {
        throw new Error("decodeGrayPng supports 8-bit grayscale only");
      }
    } else if (type === "IDAT") {
      idat.push(...payload);
    } else if (type === "IEND") {
      break;
    }
    off += 8 + len + 4;
  }
  const z = Uint8Array.from(idat);
  if ((z[0] & 0x0f) !== 8) throw new Error("bad zlib header");
  let p = 2;
  const raw: number[] = [];
  for (;;) {
    const final = z[p] & 1;
    const btype = (z[p] >> 1) & 3;
    if (btype !== 0) throw new Error("compressed PNG: use the browser decoder instead");
    const len = z[p + 1] | (z[p + 2] << 8);
    p += 5;
    for (let i = 0; i < len; i++) raw.push(z[p + i]);
    p += len;
    if (final) break;
  }
  const data = new Uint8Array(width * height);
  for (let y = 0; y < height; y++) {
    if (raw[y * (width + 1)] !== 0) throw new Error("unsupported PNG row filter");
    for (let x = 0; x < width; x++) data[y * width + x] = raw[y * (width + 1) + 1 + x];
  }
  return { width, height, data };
}

export function bytesToBase64(bytes: Uint8Array): string {
  if (typeof Buffer !== "undefined") {
    return Buffer.from(bytes).toString("base64");
  }
  let bin = "";
  for (const b of bytes) bin += String.fromCharCode(b);
  return btoa(bin);
}

export function base64ToBytes(payload: string): Uint8Array {
  if (typeof Buffer !== "undefined") {
    return new Uint8Array(Buffer.from(payload, "base64"));
  }
  const bin = atob(payload);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

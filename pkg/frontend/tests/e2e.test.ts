/**
 * End-to-end cycle against a real service process with a toy checkpoint:
 * draw -> export -> submit -> compare -> refine -> resubmit, plus the
 * bitmap/polygon rasterization round trip. Skips when the python package
 * is not available on this machine.
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { MaskCanvasState } from "../src/mask.js";
import { RemoveClient } from "../src/client.js";
import { buildPayload, exportMask, importMask } from "../src/payload.js";
import { residueHeatmap } from "../src/compare.js";
import { rasterizePolygons, type Point } from "../src/rasterize.js";
import { base64ToBytes, bytesToBase64, encodeGrayPng } from "../src/png.js";

const PORT = 8731;
const BASE = `http://127.0.0.1:${PORT}`;
const SIZE = 32;

const MAKE_CHECKPOINT = `
import sys
from demark.config import ModelConfig
from demark.model import build_model, save_checkpoint, write_model_card
cfg = ModelConfig(h=${SIZE}, w=${SIZE}, d=8, downsample_factor=8,
                  ta_blocks_per_branch=2, ffc_blocks=3, init_seed=5)
model = build_model(cfg)
save_checkpoint(model, sys.argv[1] + "/checkpoint.npz")
write_model_card(cfg, sys.argv[1] + "/model_card.json", extra={"step": 0})
print("ok")
`;

function pythonAvailable(): boolean {
  const probe = spawnSync("python3", ["-c", "import demark, uvicorn"], { timeout: 30_000 });
  return probe.status === 0;
}

/** Deterministic fake "photo" encoded as grayscale PNG (server reads as RGB). */
function testImageB64(): string {
  const data = new Uint8Array(SIZE * SIZE);
  for (let i = 0; i < data.length; i++) data[i] = (i * 7 + 31) % 256;
  return bytesToBase64(encodeGrayPng(data, SIZE, SIZE));
}

const available = pythonAvailable();
const suite = available ? describe : describe.skip;

suite("e2e against a live service", () => {
  let proc: ChildProcess | null = null;
  let client: RemoveClient;

  beforeAll(async () => {
    const dir = mkdtempSync(join(tmpdir(), "maskstudio-e2e-"));
    const script = join(dir, "make_ckpt.py");
    writeFileSync(script, MAKE_CHECKPOINT);
    const made = spawnSync("python3", [script, dir], { timeout: 120_000 });
    if (made.status !== 0) {
      throw new Error(`checkpoint build failed: ${made.stderr}`);
    }
    proc = spawn("python3", [
      "-m", "demark.cli", "serve", "--checkpoint", dir, "--port", String(PORT),
    ], { stdio: "ignore" });
    client = new RemoveClient(BASE);
    const deadline = Date.now() + 60_000;
    for (;;) {
      try {
        const health = await client.health();
        if (health.status === "ready") break;
      } catch {
        /* not up yet */
      }
      if (Date.now() > deadline) throw new Error("service did not come up");
      await new Promise((r) => setTimeout(r, 500));
    }
  }, 180_000);

  afterAll(() => {
    proc?.kill("SIGTERM");
  });

  it("health reports a model id", async () => {
    const health = await client.health();
    expect(health.status).toBe("ready");
    expect(health.model_id.length).toBeGreaterThan(0);
  });

  it("drawn bitmap mask survives export -> rasterization -> re-import pixel-exactly", async () => {
    const state = new MaskCanvasState(SIZE, SIZE);
    state.brushRadius = 3;
    state.beginStroke();
    state.strokeSegment(6, 6, 24, 12);
    state.stampDisc(20, 22, 1, 4);

    const exported = exportMask(state);
    expect(exported.kind).toBe("bitmap");
    if (exported.kind !== "bitmap") return;
    // client-side re-import of the exact payload the server will binarize
    const back = importMask(exported.mask);
    expect([...back.bitmap]).toEqual([...state.bitmap]);

    // server accepts the payload and answers deterministically
    const payload = buildPayload(testImageB64(), exported, {});
    const r1 = await client.remove(payload);
    const r2 = await client.remove(payload);
    expect(base64ToBytes(r1.image)).toEqual(base64ToBytes(r2.image));
  });

  it("client polygon preview matches server-side rasterization", async () => {
    const tri: Point[] = [[4, 4], [28, 6], [20, 26]];
    const preview = rasterizePolygons([tri], SIZE, SIZE);
    // express the preview as a bitmap payload; if the server rasterizes the
    // polygon identically, both payloads must restore identically
    const bytes = new Uint8Array(preview.length);
    for (let i = 0; i < bytes.length; i++) bytes[i] = preview[i] ? 255 : 0;
    const bitmapPayload = {
      image: testImageB64(),
      mask: bytesToBase64(encodeGrayPng(bytes, SIZE, SIZE)),
    };
    const polygonPayload = { image: testImageB64(), polygons: [tri] };
    const viaBitmap = await client.remove(bitmapPayload);
    const viaPolygon = await client.remove(polygonPayload);
    expect(viaPolygon.image).toBe(viaBitmap.image);
  });

  it("full draw -> submit -> compare -> refine cycle", async () => {
    const image = testImageB64();
    const state = new MaskCanvasState(SIZE, SIZE);
    state.brushRadius = 4;

    // draw
    state.beginStroke();
    state.strokeSegment(8, 8, 24, 8);
    // submit
    const first = await client.remove(
      buildPayload(image, exportMask(state), { return_cbkg: true }),
    );
    expect(first.cbkg).toBeTruthy();
    expect(first.timing_ms).toBeGreaterThan(0);

    // compare: residue heatmap inside the mask (fake RGBA buffers from the
    // deterministic gray test image and a shifted copy standing in for the
    // decoded canvases; the math only needs buffers + mask)
    const before = new Uint8ClampedArray(4 * SIZE * SIZE).fill(120);
    const after = new Uint8ClampedArray(4 * SIZE * SIZE).fill(128);
    const stats = residueHeatmap(before, after, state.bitmap, SIZE, SIZE);
    expect(stats.rmseInMask).toBeGreaterThan(0);

    // refine: mask stays editable; erase part, redraw, resubmit
    state.beginStroke();
    state.stampDisc(12, 8, 0, 3);
    state.strokeSegment(10, 20, 26, 20);
    const second = await client.remove(
      buildPayload(image, exportMask(state), { dilate_radius: 2 }),
    );
    expect(second.image.length).toBeGreaterThan(0);
    expect(second.image).not.toBe(first.image);
  });

  it("empty mask goes out as blind mode after confirmation", async () => {
    const state = new MaskCanvasState(SIZE, SIZE);
    const exported = exportMask(state);
    expect(exported.kind).toBe("empty");
    const result = await client.remove(buildPayload(testImageB64(), exported, {}));
    expect(result.image.length).toBeGreaterThan(0);
  });
}, 240_000);

if (!available) {
  it("e2e skipped: python demark package unavailable", () => {
    expect(true).toBe(true);
  });
}

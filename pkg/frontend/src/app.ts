/**
 * DOM wiring for the mask studio: load an image, paint or polygon a coarse
 * mask, submit to the removal service, compare before/after with a wipe
 * slider and residue heatmap, then keep refining the same mask.
 *
 * All mask/payload/compare logic lives in the imported modules; this file
 * only moves pixels between canvases and the service.
 */

import { MaskCanvasState, type Tool } from "./mask.js";
import { RemoveClient, ServiceError } from "./client.js";
import { buildPayload, exportMask } from "./payload.js";
import { residueHeatmap, wipeSplitColumn } from "./compare.js";

interface Ui {
  file: HTMLInputElement;
  canvas: HTMLCanvasElement;
  result: HTMLCanvasElement;
  cbkg: HTMLCanvasElement;
  tool: HTMLSelectElement;
  brush: HTMLInputElement;
  dilate: HTMLInputElement;
  wipe: HTMLInputElement;
  submit: HTMLButtonElement;
  undo: HTMLButtonElement;
  clear: HTMLButtonElement;
  fill: HTMLButtonElement;
  showCbkg: HTMLInputElement;
  showHeat: HTMLInputElement;
  banner: HTMLDivElement;
  stats: HTMLDivElement;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class App {
  private ui: Ui;
  private client: RemoveClient;
  private state: MaskCanvasState | null = null;
  private image: HTMLImageElement | null = null;
  private beforeRgba: Uint8ClampedArray | null = null;
  private afterRgba: Uint8ClampedArray | null = null;
  private heat: Uint8ClampedArray | null = null;
  private drawing = false;
  private lastPoint: [number, number] | null = null;

  constructor(serviceUrl: string) {
    this.client = new RemoveClient(serviceUrl);
    this.ui = {
      file: el("file"), canvas: el("canvas"), result: el("result"), cbkg: el("cbkg"),
      tool: el("tool"), brush: el("brush"), dilate: el("dilate"), wipe: el("wipe"),
      submit: el("submit"), undo: el("undo"), clear: el("clear"), fill: el("fill"),
      showCbkg: el("show-cbkg"), showHeat: el("show-heat"),
      banner: el("banner"), stats: el("stats"),
    };
    this.bind();
    void this.refreshHealth();
  }

  private bind(): void {
    this.ui.file.addEventListener("change", () => void this.loadImage());
    this.ui.tool.addEventListener("change", () => {
      if (this.state) this.state.tool = this.ui.tool.value as Tool;
    });
    this.ui.brush.addEventListener("input", () => {
      if (this.state) this.state.brushRadius = Number(this.ui.brush.value);
    });
    this.ui.dilate.addEventListener("input", () => {
      if (this.state) this.state.dilationRadius = Number(this.ui.dilate.value);
    });
    this.ui.undo.addEventListener("click", () => {
      this.state?.undo();
      this.redraw();
    });
    this.ui.clear.addEventListener("click", () => {
      this.state?.clear();
      this.redraw();
    });
    this.ui.fill.addEventListener("click", () => {
      this.state?.fillAll();
      this.redraw();
    });
    this.ui.submit.addEventListener("click", () => void this.submit());
    this.ui.wipe.addEventListener("input", () => this.renderResult());
    this.ui.showCbkg.addEventListener("change", () => this.renderResult());
    this.ui.showHeat.addEventListener("change", () => this.renderResult());

    const canvas = this.ui.canvas;
    canvas.addEventListener("pointerdown", (ev) => this.pointerDown(ev));
    canvas.addEventListener("pointermove", (ev) => this.pointerMove(ev));
    window.addEventListener("pointerup", () => this.pointerUp());
    canvas.addEventListener("dblclick", () => {
      if (this.state?.tool === "polygon") {
        this.state.closePolygon();
        this.redraw();
      }
    });
  }

  private async refreshHealth(): Promise<void> {
    try {
      const health = await this.client.health();
      this.banner(
        health.status === "ready"
          ? `service ready (model ${health.model_id})`
          : "service degraded: no model loaded",
        health.status !== "ready",
      );
    } catch (err) {
      this.banner(`service unreachable: ${String(err)}`, true);
    }
  }

  private banner(text: string, isError = false): void {
    this.ui.banner.textContent = text;
    this.ui.banner.className = isError ? "banner error" : "banner";
  }

  private async loadImage(): Promise<void> {
    const file = this.ui.file.files?.[0];
    if (!file) return;
    const url = URL.createObjectURL(file);
    const img = new Image();
    await new Promise((resolve, reject) => {
      img.onload = resolve;
      img.onerror = reject;
      img.src = url;
    });
    this.image = img;
    this.state = new MaskCanvasState(img.naturalWidth, img.naturalHeight);
    this.state.tool = this.ui.tool.value as Tool;
    this.state.brushRadius = Number(this.ui.brush.value);
    this.ui.canvas.width = img.naturalWidth;
    this.ui.canvas.height = img.naturalHeight;
    const ctx = this.ui.canvas.getContext("2d")!;
    ctx.drawImage(img, 0, 0);
    this.beforeRgba = ctx.getImageData(0, 0, img.naturalWidth, img.naturalHeight).data.slice();
    this.afterRgba = null;
    this.redraw();
  }

  private canvasPoint(ev: PointerEvent): [number, number] {
    const rect = this.ui.canvas.getBoundingClientRect();
    const sx = this.ui.canvas.width / rect.width;
    const sy = this.ui.canvas.height / rect.height;
    return [(ev.clientX - rect.left) * sx, (ev.clientY - rect.top) * sy];
  }

  private pointerDown(ev: PointerEvent): void {
    if (!this.state) return;
    const [x, y] = this.canvasPoint(ev);
    if (this.state.tool === "polygon") {
      this.state.addPolygonVertex(x, y);
      this.redraw();
      return;
    }
    this.drawing = true;
    this.state.beginStroke();
    const value = this.state.tool === "eraser" ? 0 : 1;
    this.state.stampDisc(x, y, value);
    this.lastPoint = [x, y];
    this.redraw();
  }

  private pointerMove(ev: PointerEvent): void {
    if (!this.drawing || !this.state || !this.lastPoint) return;
    const [x, y] = this.canvasPoint(ev);
    const value = this.state.tool === "eraser" ? 0 : 1;
    this.state.strokeSegment(this.lastPoint[0], this.lastPoint[1], x, y, value);
    this.lastPoint = [x, y];
    this.redraw();
  }

  private pointerUp(): void {
    this.drawing = false;
    this.lastPoint = null;
  }

  private redraw(): void {
    if (!this.state || !this.image) return;
    const { width, height } = this.state;
    const ctx = this.ui.canvas.getContext("2d")!;
    ctx.clearRect(0, 0, width, height);
    ctx.drawImage(this.image, 0, 0);
    const overlay = ctx.getImageData(0, 0, width, height);
    const bitmap = this.state.bitmap;
    for (let i = 0; i < bitmap.length; i++) {
      if (bitmap[i]) {
        overlay.data[4 * i] = Math.min(255, overlay.data[4 * i] + 120);
        overlay.data[4 * i + 3] = 255;
      }
    }
    ctx.putImageData(overlay, 0, 0);
    if (this.state.polygonVertices.length) {
      ctx.strokeStyle = "#ffcc00";
      ctx.beginPath();
      const [x0, y0] = this.state.polygonVertices[0];
      ctx.moveTo(x0, y0);
      for (const [x, y] of this.state.polygonVertices.slice(1)) ctx.lineTo(x, y);
      ctx.stroke();
    }
  }

  private async submit(): Promise<void> {
    if (!this.state || !this.image || !this.beforeRgba) {
      this.banner("load an image first", true);
      return;
    }
    const exported = exportMask(this.state);
    if (exported.kind === "empty") {
      const blind = window.confirm(
        "The mask is empty. Submit in blind mode (the model receives an all-ones mask)?",
      );
      if (!blind) return;
    }
    const imageB64 = await this.encodeImage();
    const payload = buildPayload(imageB64, exported, {
      return_cbkg: this.ui.showCbkg.checked,
      dilate_radius: this.state.dilationRadius,
    });
    this.ui.submit.disabled = true;
    this.banner("running removal...");
    try {
      const result = await this.client.remove(payload);
      await this.showResult(result.image, result.cbkg ?? null);
      this.banner(`done in ${result.timing_ms.toFixed(0)} ms (model ${result.model_id})`);
    } catch (err) {
      if (err instanceof ServiceError) {
        this.banner(`request failed (${err.status}): ${err.message}`, true);
      } else {
        this.banner(String(err), true);
      }
    } finally {
      this.ui.submit.disabled = false; // mask stays editable for refinement
    }
  }

  private async encodeImage(): Promise<string> {
    const off = document.createElement("canvas");
    off.width = this.image!.naturalWidth;
    off.height = this.image!.naturalHeight;
    off.getContext("2d")!.drawImage(this.image!, 0, 0);
    const blob: Blob = await new Promise((resolve) =>
      off.toBlob((b) => resolve(b!), "image/png"),
    );
    const buf = new Uint8Array(await blob.arrayBuffer());
    let bin = "";
    for (const b of buf) bin += String.fromCharCode(b);
    return btoa(bin);
  }

  private async showResult(imageB64: string, cbkgB64: string | null): Promise<void> {
    const img = await decodeToImage(imageB64);
    const { width, height } = this.state!;
    this.ui.result.width = width;
    this.ui.result.height = height;
    const ctx = this.ui.result.getContext("2d")!;
    ctx.drawImage(img, 0, 0);
    this.afterRgba = ctx.getImageData(0, 0, width, height).data.slice();
    const stats = residueHeatmap(this.beforeRgba!, this.afterRgba, this.state!.bitmap, width, height);
    this.heat = stats.heatmap;
    this.ui.stats.textContent = `masked residue RMSE: ${stats.rmseInMask.toFixed(1)} (0-255)`;
    if (cbkgB64) {
      const cimg = await decodeToImage(cbkgB64);
      this.ui.cbkg.width = width;
      this.ui.cbkg.height = height;
      this.ui.cbkg.getContext("2d")!.drawImage(cimg, 0, 0);
    }
    this.ui.cbkg.style.display = cbkgB64 && this.ui.showCbkg.checked ? "block" : "none";
    this.renderResult();
  }

  /** Wipe composite: left of the split shows the input, right the result. */
  private renderResult(): void {
    if (!this.state || !this.beforeRgba || !this.afterRgba) return;
    const { width, height } = this.state;
    const split = wipeSplitColumn(width, Number(this.ui.wipe.value) / 100);
    const ctx = this.ui.result.getContext("2d")!;
    const frame = ctx.createImageData(width, height);
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        const i = 4 * (y * width + x);
        const src = x < split ? this.beforeRgba : this.afterRgba;
        frame.data[i] = src[i];
        frame.data[i + 1] = src[i + 1];
        frame.data[i + 2] = src[i + 2];
        frame.data[i + 3] = 255;
      }
    }
    if (this.ui.showHeat.checked && this.heat) {
      for (let i = 0; i < width * height; i++) {
        const a = this.heat[4 * i + 3] / 255;
        if (a > 0) {
          frame.data[4 * i] = Math.round((1 - a) * frame.data[4 * i] + a * 255);
          frame.data[4 * i + 1] = Math.round((1 - a) * frame.data[4 * i + 1]);
          frame.data[4 * i + 2] = Math.round((1 - a) * frame.data[4 * i + 2]);
        }
      }
    }
    ctx.putImageData(frame, 0, 0);
    this.ui.cbkg.style.display = this.ui.showCbkg.checked && this.ui.cbkg.width > 1 ? "block" : "none";
  }
}

async function decodeToImage(b64: string): Promise<HTMLImageElement> {
  const img = new Image();
  await new Promise((resolve, reject) => {
    img.onload = resolve;
    img.onerror = reject;
    img.src = `data:image/png;base64,${b64}`;
  });
  return img;
}

const params = new URLSearchParams(window.location.search);
new App(params.get("service") ?? "http://127.0.0.1:8000");

/**
 * Browser entry point: wires the session state machine, API client, and
 * rasterizer to a single-slice viewer with a quality strip.
 *
 * Layout: a connect panel (server URL + volume source), a toolbar (tool,
 * thickness, window, opacity, submit, jump-to-suggestion), the slice
 * canvas with mask overlay and in-progress stroke preview, and a strip of
 * per-slice quality scores with the suggested slice highlighted.
 */

import { ApiClient, ApiError, argminQuality } from "./api.js";
import { UiSession } from "./session.js";
import { ViewTransform } from "./view.js";
import { rasterizeGeometry, GeometryError, type InteractionType } from "./rasterize.js";
import { buildGeometry } from "./geometry.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

class App {
  private client: ApiClient | null = null;
  private session: UiSession | null = null;
  private view = new ViewTransform();
  private sliceImage: HTMLImageElement | null = null;
  private maskImage: HTMLImageElement | null = null;
  private drawing = false;

  private readonly canvas = el<HTMLCanvasElement>("viewer");
  private readonly strip = el<HTMLDivElement>("quality-strip");
  private readonly banner = el<HTMLDivElement>("banner");
  private readonly roundLabel = el<HTMLSpanElement>("round-label");
  private readonly cursorLabel = el<HTMLSpanElement>("cursor-label");
  private readonly suggestionLabel = el<HTMLSpanElement>("suggestion-label");
  private readonly jumpButton = el<HTMLButtonElement>("jump");
  private readonly submitButton = el<HTMLButtonElement>("submit");
  private readonly clearButton = el<HTMLButtonElement>("clear");

  constructor() {
    el<HTMLButtonElement>("connect").addEventListener("click", () => {
      void this.connect();
    });
    this.submitButton.addEventListener("click", () => {
      void this.submitGuidance();
    });
    this.clearButton.addEventListener("click", () => {
      this.session?.clearPending();
      this.render();
    });
    this.jumpButton.addEventListener("click", () => {
      const s = this.session;
      if (s !== null && s.jumpToSuggestion()) {
        void this.refreshSlice();
      }
    });
    for (const tool of ["scribble", "bounding_box", "extreme_points"] as const) {
      el<HTMLInputElement>(`tool-${tool}`).addEventListener("change", () => {
        this.session?.setTool(tool);
        this.render();
      });
    }
    el<HTMLInputElement>("thickness").addEventListener("change", (ev) => {
      const s = this.session;
      if (s !== null) {
        s.thickness = Math.max(1, Math.trunc(Number((ev.target as HTMLInputElement).value)));
      }
    });
    el<HTMLInputElement>("opacity").addEventListener("input", (ev) => {
      this.session?.setOpacity(Number((ev.target as HTMLInputElement).value));
      this.render();
    });
    el<HTMLButtonElement>("apply-window").addEventListener("click", () => {
      const s = this.session;
      if (s === null) {
        return;
      }
      const lo = Number(el<HTMLInputElement>("window-lo").value);
      const hi = Number(el<HTMLInputElement>("window-hi").value);
      if (s.setWindow(lo, hi)) {
        void this.refreshSlice();
      } else {
        this.showBanner("window needs hi > lo");
      }
    });
    el<HTMLInputElement>("slice-slider").addEventListener("input", (ev) => {
      const s = this.session;
      if (s !== null) {
        s.setCursor(Number((ev.target as HTMLInputElement).value));
        void this.refreshSlice();
      }
    });
    this.canvas.addEventListener("pointerdown", (ev) => this.onPointerDown(ev));
    this.canvas.addEventListener("pointermove", (ev) => this.onPointerMove(ev));
    this.canvas.addEventListener("pointerup", () => {
      this.drawing = false;
    });
    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const rect = this.canvas.getBoundingClientRect();
      this.view.zoomAbout(ev.deltaY < 0 ? 1.25 : 0.8, {
        x: ev.clientX - rect.left,
        y: ev.clientY - rect.top,
      });
      this.render();
    });
  }

  private showBanner(message: string, retry = false): void {
    this.banner.textContent = retry ? `${message} — press Submit to retry` : message;
    this.banner.style.display = message === "" ? "none" : "block";
  }

  private async connect(): Promise<void> {
    const base = el<HTMLInputElement>("server-url").value || window.location.origin;
    this.client = new ApiClient(base);
    const path = el<HTMLInputElement>("volume-path").value.trim();
    const body = path !== "" ? { path } : { synthetic: { seed: 0 } };
    try {
      const info = await this.client.createSession(body);
      this.session = new UiSession(info);
      const slider = el<HTMLInputElement>("slice-slider");
      slider.max = String(info.c - 1);
      slider.value = "0";
      this.view = ViewTransform.fit(info.h, info.w, this.canvas.width, this.canvas.height);
      this.showBanner("");
      await this.refreshState();
      await this.refreshSlice();
    } catch (err) {
      this.showBanner(err instanceof Error ? err.message : String(err));
    }
  }

  private canvasToVolumePoint(ev: PointerEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    const v = this.view.canvasToVolume({
      x: ev.clientX - rect.left,
      y: ev.clientY - rect.top,
    });
    return [v.row, v.col];
  }

  private onPointerDown(ev: PointerEvent): void {
    const s = this.session;
    if (s === null || s.busy) {
      return;
    }
    const p = this.canvasToVolumePoint(ev);
    if (s.tool === "bounding_box") {
      if (s.pending.length >= 2) {
        s.clearPending();
      }
      s.addPoint(p);
      s.addPoint(p);
      this.drawing = true;
    } else if (s.tool === "extreme_points") {
      if (s.pending.length >= 4) {
        s.clearPending();
      }
      s.addPoint(p);
    } else {
      s.addPoint(p);
      this.drawing = true;
    }
    this.render();
  }

  private onPointerMove(ev: PointerEvent): void {
    const s = this.session;
    if (s === null || !this.drawing || s.busy) {
      return;
    }
    const p = this.canvasToVolumePoint(ev);
    if (s.tool === "bounding_box") {
      s.updateLastPoint(p);
    } else if (s.tool === "scribble") {
      s.addPoint(p);
    }
    this.render();
  }

  private async submitGuidance(): Promise<void> {
    const s = this.session;
    const client = this.client;
    if (s === null || client === null) {
      return;
    }
    const blocker = s.submitBlocker();
    if (blocker !== null) {
      this.showBanner(blocker);
      return;
    }
    let body;
    try {
      body = s.beginSubmit();
    } catch (err) {
      this.showBanner(err instanceof Error ? err.message : String(err));
      return;
    }
    if (body === null) {
      return;
    }
    this.setControlsDisabled(true);
    try {
      const response = await client.submitGuidance(s.sessionId, body);
      const state = await client.fetchState(s.sessionId);
      s.completeSubmit(response.round, state);
      this.showBanner("");
      await this.refreshSlice();
    } catch (err) {
      s.failSubmit();
      if (err instanceof ApiError && err.status >= 500) {
        this.showBanner(err.message, true);
      } else {
        this.showBanner(err instanceof Error ? err.message : String(err));
      }
    } finally {
      this.setControlsDisabled(false);
      this.render();
    }
  }

  private setControlsDisabled(disabled: boolean): void {
    this.submitButton.disabled = disabled;
    this.clearButton.disabled = disabled;
    el<HTMLInputElement>("slice-slider").disabled = disabled;
  }

  private async refreshState(): Promise<void> {
    const s = this.session;
    const client = this.client;
    if (s === null || client === null) {
      return;
    }
    try {
      s.applyState(await client.fetchState(s.sessionId));
    } catch (err) {
      this.showBanner(err instanceof Error ? err.message : String(err));
    }
    this.render();
  }

  private async refreshSlice(): Promise<void> {
    const s = this.session;
    const client = this.client;
    if (s === null || client === null) {
      return;
    }
    const k = s.cursor;
    try {
      this.sliceImage = await loadImage(client.sliceUrl(s.sessionId, k, s.window));
      this.maskImage =
        s.round > 0 ? await loadImage(client.maskUrl(s.sessionId, k)) : null;
    } catch {
      this.showBanner(`failed to fetch slice ${k}`);
    }
    this.render();
  }

  private render(): void {
    const ctx = this.canvas.getContext("2d");
    const s = this.session;
    if (ctx === null) {
      return;
    }
    ctx.fillStyle = "#111";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    if (s === null) {
      return;
    }
    ctx.save();
    ctx.imageSmoothingEnabled = this.view.zoom < 1;
    ctx.setTransform(this.view.zoom, 0, 0, this.view.zoom, this.view.panX, this.view.panY);
    if (this.sliceImage !== null) {
      ctx.drawImage(this.sliceImage, 0, 0);
    }
    if (this.maskImage !== null && s.opacity > 0) {
      ctx.globalAlpha = s.opacity;
      ctx.drawImage(tintMask(this.maskImage), 0, 0);
      ctx.globalAlpha = 1;
    }
    this.drawPendingStroke(ctx, s);
    ctx.restore();

    this.roundLabel.textContent = String(s.round);
    this.cursorLabel.textContent = `${s.cursor} / ${s.depth - 1}`;
    this.suggestionLabel.textContent =
      s.suggestedSlice === null ? "all slices annotated" : `slice ${s.suggestedSlice}`;
    this.jumpButton.disabled = !s.canJump;
    this.jumpButton.title = s.canJump ? "" : "every slice has been annotated";
    this.renderStrip(s);
  }

  private drawPendingStroke(ctx: CanvasRenderingContext2D, s: UiSession): void {
    if (s.pending.length === 0) {
      return;
    }
    try {
      const geometry = buildGeometry(s.tool, s.pending, s.thickness);
      const raster = rasterizeGeometry(s.tool, geometry, [s.height, s.width]);
      ctx.fillStyle = "rgba(64, 160, 255, 0.55)";
      for (let r = 0; r < raster.height; r++) {
        for (let c = 0; c < raster.width; c++) {
          if (raster.data[r * raster.width + c] === 1) {
            ctx.fillRect(c, r, 1, 1);
          }
        }
      }
    } catch (err) {
      if (!(err instanceof GeometryError) && !(err instanceof Error)) {
        throw err;
      }
      ctx.fillStyle = "rgba(64, 160, 255, 0.9)";
      for (const [r, c] of s.pending) {
        ctx.fillRect(c - 1, r - 1, 3, 3);
      }
    }
  }

  private renderStrip(s: UiSession): void {
    this.strip.replaceChildren();
    const annotated = new Set(s.annotatedSlices);
    const clientSuggestion = argminQuality(s.qualityScores, s.annotatedSlices);
    for (let k = 0; k < s.depth; k++) {
      const cell = document.createElement("div");
      cell.className = "strip-cell";
      const q = s.qualityScores[k];
      if (q !== undefined) {
        const hue = Math.round(120 * Math.min(1, Math.max(0, q)));
        cell.style.background = `hsl(${hue}, 70%, 45%)`;
        cell.title = `slice ${k}: quality ${q.toFixed(3)}`;
      } else {
        cell.title = `slice ${k}`;
      }
      if (annotated.has(k)) {
        cell.classList.add("annotated");
      }
      if (k === s.suggestedSlice && s.suggestedSlice === clientSuggestion) {
        cell.classList.add("suggested");
      }
      if (k === s.cursor) {
        cell.classList.add("cursor");
      }
      cell.addEventListener("click", () => {
        s.setCursor(k);
        void this.refreshSlice();
      });
      this.strip.appendChild(cell);
    }
  }
}

function loadImage(url: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.crossOrigin = "anonymous";
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = `${url}${url.includes("?") ? "&" : "?"}t=${Date.now()}`;
  });
}

/** Recolor a binary mask PNG to a red overlay, transparent background. */
function tintMask(mask: HTMLImageElement): HTMLCanvasElement {
  const off = document.createElement("canvas");
  off.width = mask.naturalWidth;
  off.height = mask.naturalHeight;
  const ctx = off.getContext("2d");
  if (ctx === null) {
    return off;
  }
  ctx.drawImage(mask, 0, 0);
  const pixels = ctx.getImageData(0, 0, off.width, off.height);
  const d = pixels.data;
  for (let i = 0; i < d.length; i += 4) {
    const on = d[i]! > 127;
    d[i] = 255;
    d[i + 1] = 48;
    d[i + 2] = 48;
    d[i + 3] = on ? 255 : 0;
  }
  ctx.putImageData(pixels, 0, 0);
  return off;
}

new App();

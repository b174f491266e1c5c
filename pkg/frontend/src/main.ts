/**
 * Browser entry point: wires the controller to a canvas and a small strip
 * of controls. All segmentation logic lives in the controller and the
 * service; this file only draws and forwards events.
 */

import { ApiClient } from "./api.js";
import { regionColor } from "./colors.js";
import { compositeOverlay } from "./overlay.js";
import { AnnotatorController, boxFromClicks } from "./session.js";

const DISPLAY_SCALE = 6;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const canvas = el<HTMLCanvasElement>("view");
const ctx = canvas.getContext("2d")!;
const api = new ApiClient("");
const controller = new AnnotatorController(api);
controller.viewScale = DISPLAY_SCALE;

// image layer at native resolution; flat gray until real pixels arrive
let baseImage: ImageData | null = null;

function grayBase(width: number, height: number): ImageData {
  const img = new ImageData(width, height);
  img.data.fill(128);
  for (let i = 3; i < img.data.length; i += 4) img.data[i] = 255;
  return img;
}

async function imageDataFromBlob(blob: Blob): Promise<ImageData> {
  const bitmap = await createImageBitmap(blob);
  const off = document.createElement("canvas");
  off.width = bitmap.width;
  off.height = bitmap.height;
  const octx = off.getContext("2d")!;
  octx.drawImage(bitmap, 0, 0);
  return octx.getImageData(0, 0, bitmap.width, bitmap.height);
}

function draw(): void {
  const s = controller.state;
  if (s.sessionId === null) return;
  canvas.width = s.width * DISPLAY_SCALE;
  canvas.height = s.height * DISPLAY_SCALE;

  const base = baseImage ?? grayBase(s.width, s.height);
  let pixels: Uint8ClampedArray<ArrayBufferLike> = base.data;
  if (s.labels !== null) {
    try {
      pixels = compositeOverlay(base.data, s.width, s.height, s.labels,
                                s.opacity);
    } catch (err) {
      el("banner").textContent = String(err);
    }
  }
  const off = document.createElement("canvas");
  off.width = s.width;
  off.height = s.height;
  off.getContext("2d")!.putImageData(
    new ImageData(new Uint8ClampedArray(pixels), s.width, s.height), 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);

  // staging previews and the live stroke, in display coordinates
  ctx.lineWidth = 2;
  s.stagedRegions.forEach((clicks, i) => {
    const box = boxFromClicks(clicks)!;
    const [r, g, b] = regionColor(i + 1);
    ctx.strokeStyle = `rgb(${r},${g},${b})`;
    ctx.strokeRect(box.x0 * DISPLAY_SCALE, box.y0 * DISPLAY_SCALE,
                   (box.x1 - box.x0) * DISPLAY_SCALE,
                   (box.y1 - box.y0) * DISPLAY_SCALE);
  });
  ctx.fillStyle = "#fff";
  for (const [x, y] of s.pendingClicks) {
    ctx.beginPath();
    ctx.arc(x * DISPLAY_SCALE, y * DISPLAY_SCALE, 3, 0, 2 * Math.PI);
    ctx.fill();
  }
  const preview = boxFromClicks(s.pendingClicks);
  if (preview) {
    ctx.strokeStyle = "#fff";
    ctx.setLineDash([4, 4]);
    ctx.strokeRect(preview.x0 * DISPLAY_SCALE, preview.y0 * DISPLAY_SCALE,
                   (preview.x1 - preview.x0) * DISPLAY_SCALE,
                   (preview.y1 - preview.y0) * DISPLAY_SCALE);
    ctx.setLineDash([]);
  }
  if (s.pendingStroke.length > 1) {
    const [r, g, b] = regionColor(s.activeRegion);
    ctx.strokeStyle = `rgb(${r},${g},${b})`;
    ctx.beginPath();
    s.pendingStroke.forEach(([x, y], i) => {
      if (i === 0) ctx.moveTo(x * DISPLAY_SCALE, y * DISPLAY_SCALE);
      else ctx.lineTo(x * DISPLAY_SCALE, y * DISPLAY_SCALE);
    });
    ctx.stroke();
  }

  drawControls();
}

function drawControls(): void {
  const s = controller.state;
  el("prompt").textContent = s.prompt ?? "";
  el("banner").textContent = s.banner ?? "";
  el("warnings").textContent = s.warnings.join("; ");
  el("revision").textContent =
    s.sessionId ? `${s.sessionId} rev ${s.revision}` : "";
  (el<HTMLButtonElement>("mode-ep")).classList
    .toggle("active", s.toolMode === "extreme-point");
  (el<HTMLButtonElement>("mode-scribble")).classList
    .toggle("active", s.toolMode === "scribble");

  const strip = el("regions");
  strip.textContent = "";
  for (const row of s.summary) {
    const btn = document.createElement("button");
    const [r, g, b] = regionColor(row.region_id);
    btn.style.background = `rgb(${r},${g},${b})`;
    btn.textContent = `${row.region_id} (${row.pixel_count}px)`;
    btn.classList.toggle("active", row.region_id === s.activeRegion);
    btn.onclick = () => controller.setActiveRegion(row.region_id);
    strip.appendChild(btn);
  }
}

controller.subscribe(draw);

canvas.addEventListener("pointerdown", (e) => {
  const rect = canvas.getBoundingClientRect();
  controller.pointerDown(e.clientX - rect.left, e.clientY - rect.top);
});
canvas.addEventListener("pointermove", (e) => {
  if (e.buttons === 0) return;
  const rect = canvas.getBoundingClientRect();
  controller.pointerMove(e.clientX - rect.left, e.clientY - rect.top);
});
window.addEventListener("pointerup", () => controller.pointerUp());

el<HTMLInputElement>("file").addEventListener("change", async (e) => {
  const file = (e.target as HTMLInputElement).files?.[0];
  if (!file) return;
  const bytes = new Uint8Array(await file.arrayBuffer());
  let b64 = "";
  for (const byte of bytes) b64 += String.fromCharCode(byte);
  baseImage = await imageDataFromBlob(file);
  await controller.startFromImage(btoa(b64));
});

el<HTMLButtonElement>("load-scene").addEventListener("click", async () => {
  const sceneId = el<HTMLInputElement>("scene-id").value.trim();
  if (!sceneId) return;
  // the API carries labels only, never scene imagery; if the dataset
  // directory is served next to the page we can show the real pixels,
  // otherwise annotate over flat gray
  baseImage = null;
  try {
    const resp = await fetch(`scenes/${sceneId}/image.png`);
    if (resp.ok) baseImage = await imageDataFromBlob(await resp.blob());
  } catch {
    // keep the gray fallback
  }
  await controller.startFromScene(sceneId);
});

el<HTMLButtonElement>("mode-ep").addEventListener(
  "click", () => controller.setToolMode("extreme-point"));
el<HTMLButtonElement>("mode-scribble").addEventListener(
  "click", () => controller.setToolMode("scribble"));
el<HTMLButtonElement>("undo").addEventListener(
  "click", () => controller.undoClick());
el<HTMLButtonElement>("start").addEventListener(
  "click", () => controller.submitExtremePoints());
el<HTMLInputElement>("opacity").addEventListener("input", (e) => {
  controller.setOpacity(Number((e.target as HTMLInputElement).value) / 100);
});

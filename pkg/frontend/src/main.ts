/**
 * Browser entry point: wires the DOM to the session controller.
 *
 * Layout lives in index.html; this file only reads inputs, forwards them to
 * the controller, and repaints the two canvases. Slider and reference clicks
 * repaint from memory, so the page stays responsive while nothing is fetched.
 */

import { ApiError, ForensicApi } from "./api.js";
import { AnalystSession } from "./session.js";
import { UnreliableReferenceError } from "./state.js";
import { OVERLAY_COLORS } from "./overlay.js";
import { massAbove, massBelow } from "./histogram.js";

const BASE_URL = localStorage.getItem("forensim_api_url") ?? "http://127.0.0.1:8000";

const el = {
  file: document.getElementById("file-input") as HTMLInputElement,
  model: document.getElementById("model-select") as HTMLSelectElement,
  eta: document.getElementById("eta-slider") as HTMLInputElement,
  etaLabel: document.getElementById("eta-label") as HTMLSpanElement,
  status: document.getElementById("status-line") as HTMLParagraphElement,
  image: document.getElementById("image-canvas") as HTMLCanvasElement,
  histogram: document.getElementById("histogram-canvas") as HTMLCanvasElement,
};

const api = new ForensicApi(BASE_URL);
const session = new AnalystSession(api);
let bitmap: ImageBitmap | null = null;

function setStatus(text: string, isError = false): void {
  el.status.textContent = text;
  el.status.className = isError ? "error" : "";
}

async function refreshModels(): Promise<void> {
  const models = await api.listModels();
  el.model.innerHTML = "";
  for (const m of models) {
    const opt = document.createElement("option");
    opt.value = m.model_id;
    opt.textContent = `${m.model_id.slice(0, 10)} (${m.patch_size}px, eta=${m.threshold})`;
    opt.selected = m.default;
    el.model.appendChild(opt);
  }
  if (models.length === 0) setStatus("no models loaded on the server", true);
}

function drawOverlay(): void {
  const ctx = el.image.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, el.image.width, el.image.height);
  if (bitmap) ctx.drawImage(bitmap, 0, 0);
  const grid = session.state.grid;
  if (!grid) return;
  for (const cell of session.overlay()) {
    if (!cell.reliable) {
      ctx.fillStyle = OVERLAY_COLORS.unreliableFill;
      ctx.fillRect(cell.x, cell.y, cell.size, cell.size);
    }
    if (cell.paint === "flagged") {
      ctx.fillStyle = OVERLAY_COLORS.flaggedFill;
      ctx.fillRect(cell.x, cell.y, cell.size, cell.size);
    } else if (cell.paint === "reference") {
      ctx.strokeStyle = OVERLAY_COLORS.referenceOutline;
      ctx.lineWidth = 3;
      ctx.strokeRect(cell.x + 1.5, cell.y + 1.5, cell.size - 3, cell.size - 3);
    }
  }
}

function drawHistogram(): void {
  const ctx = el.histogram.getContext("2d");
  if (!ctx) return;
  const { width, height } = el.histogram;
  ctx.clearRect(0, 0, width, height);
  const hist = session.histogram(24);
  if (hist.total === 0) {
    ctx.fillStyle = "#666";
    ctx.font = "13px sans-serif";
    ctx.fillText("select a reference block to see its score distribution", 12, height / 2);
    return;
  }
  const peak = Math.max(...hist.counts);
  const barW = width / hist.counts.length;
  hist.counts.forEach((count, i) => {
    const h = peak === 0 ? 0 : (count / peak) * (height - 18);
    const low = hist.edges[i + 1] <= session.state.eta;
    ctx.fillStyle = low ? "rgba(220, 53, 53, 0.8)" : "rgba(59, 130, 246, 0.8)";
    ctx.fillRect(i * barW + 1, height - h, barW - 2, h);
  });
  // eta marker
  const x = session.state.eta * width;
  ctx.strokeStyle = "#111";
  ctx.setLineDash([4, 3]);
  ctx.beginPath();
  ctx.moveTo(x, 0);
  ctx.lineTo(x, height);
  ctx.stroke();
  ctx.setLineDash([]);
  const below = (massBelow(hist, session.state.eta) * 100).toFixed(0);
  const above = (massAbove(hist, session.state.eta) * 100).toFixed(0);
  ctx.fillStyle = "#333";
  ctx.font = "12px sans-serif";
  ctx.fillText(`${below}% flagged / ${above}% similar`, 8, 13);
}

function repaint(): void {
  drawOverlay();
  drawHistogram();
}

async function openFile(file: File): Promise<void> {
  setStatus(`scoring ${file.name} ...`);
  const b64 = await new Promise<string>((resolve, reject) => {
    const reader = new FileReader();
    reader.onerror = () => reject(reader.error);
    reader.onload = () => resolve((reader.result as string).split(",", 2)[1]);
    reader.readAsDataURL(file);
  });
  bitmap = await createImageBitmap(file);
  el.image.width = bitmap.width;
  el.image.height = bitmap.height;
  await session.open(b64, el.model.value || undefined);
  const grid = session.state.grid;
  setStatus(
    `ready: ${grid?.rows}x${grid?.cols} blocks of ${grid?.block_size}px, matrix cached; click a block`,
  );
  repaint();
}

el.file.addEventListener("change", () => {
  const file = el.file.files?.[0];
  if (!file) return;
  openFile(file).catch((err) => setStatus(describe(err), true));
});

el.image.addEventListener("click", (ev) => {
  const grid = session.state.grid;
  if (!grid || !session.state.scores) return;
  const rect = el.image.getBoundingClientRect();
  const px = ((ev.clientX - rect.left) / rect.width) * el.image.width;
  const py = ((ev.clientY - rect.top) / rect.height) * el.image.height;
  const col = clamp(Math.round((px - grid.block_size / 2) / grid.stride), 0, grid.cols - 1);
  const row = clamp(Math.round((py - grid.block_size / 2) / grid.stride), 0, grid.rows - 1);
  try {
    session.pickReference(row, col);
    setStatus(`reference block (${row}, ${col})`);
    repaint();
  } catch (err) {
    if (err instanceof UnreliableReferenceError) {
      setStatus(err.message, true);
    } else {
      setStatus(describe(err), true);
    }
  }
});

el.eta.addEventListener("input", () => {
  const eta = Number(el.eta.value);
  session.setEta(eta);
  el.etaLabel.textContent = eta.toFixed(2);
  repaint();
});

el.model.addEventListener("change", () => {
  session
    .switchModel(el.model.value)
    .then(() => {
      setStatus(`model ${el.model.value.slice(0, 10)} active`);
      repaint();
    })
    .catch((err) => setStatus(describe(err), true));
});

function clamp(v: number, lo: number, hi: number): number {
  return Math.max(lo, Math.min(hi, v));
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

refreshModels().catch((err) => setStatus(`cannot reach ${BASE_URL}: ${describe(err)}`, true));
el.etaLabel.textContent = Number(el.eta.value).toFixed(2);

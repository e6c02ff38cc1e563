/**
 * DOM wiring for the retrieval client: drag-drop query, ranked gallery,
 * annotation drawing, and the filter preview panel. All numeric work
 * happens server-side; this file only renders what the service returns.
 */

import { ApiClient, ApiError } from "./api.js";
import {
  AnnotationDraft,
  AnnotationShape,
  DEFAULT_SESSION,
  GalleryTile,
  QuerySession,
  ShapeKind,
  buildGallery,
  describeServerError,
  parseAnnotationFile,
  serializeAnnotation,
  validateAnnotationDraft,
} from "./core.js";

const SERVER_BASE = "";
const ROI_SIZE = 64;

const api = new ApiClient(SERVER_BASE);

interface AppState {
  session: QuerySession;
  queryFile: File | null;
  tiles: GalleryTile[];
  selectedTile: GalleryTile | null;
  draftShapes: AnnotationShape[];
  pendingPolygon: number[];
  tool: ShapeKind;
  dragStart: [number, number] | null;
}

const state: AppState = {
  session: { ...DEFAULT_SESSION },
  queryFile: null,
  tiles: [],
  selectedTile: null,
  draftShapes: [],
  pendingPolygon: [],
  tool: "box",
  dragStart: null,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(text: string, isError = false) {
  const status = el<HTMLDivElement>("status");
  status.textContent = text;
  status.className = isError ? "status error" : "status";
}

// ---------------------------------------------------------------------------
// query flow
// ---------------------------------------------------------------------------

function readSession(): QuerySession {
  const k = parseInt(el<HTMLInputElement>("k-input").value, 10);
  const setting = el<HTMLSelectElement>("setting-input").value as QuerySession["setting"];
  const patient = el<HTMLInputElement>("patient-input").value.trim();
  return { k: Number.isFinite(k) && k >= 1 ? k : 9, setting, patientId: patient || null };
}

async function runQuery() {
  if (!state.queryFile) {
    setStatus("drop a query image first", true);
    return;
  }
  state.session = readSession();
  setStatus("querying…");
  try {
    const hits = await api.query(state.queryFile, state.queryFile.name, state.session);
    state.tiles = buildGallery(hits, SERVER_BASE);
    renderGallery();
    setStatus(`${state.tiles.length} candidates (ascending cosine distance)`);
  } catch (err) {
    if (err instanceof DOMException && err.name === "AbortError") return; // superseded
    state.tiles = [];
    renderGallery();
    if (err instanceof ApiError) {
      setStatus(describeServerError(err.status, err.detail), true);
    } else {
      setStatus(String(err), true);
    }
  }
}

function renderGallery() {
  const gallery = el<HTMLDivElement>("gallery");
  gallery.replaceChildren();
  if (state.tiles.length === 0) {
    const empty = document.createElement("p");
    empty.className = "empty-state";
    empty.textContent = "no candidates to show";
    gallery.appendChild(empty);
    return;
  }
  // tiles render strictly in server order
  for (const tile of state.tiles) {
    const card = document.createElement("figure");
    card.className = "tile";
    const img = document.createElement("img");
    img.src = tile.thumbnailUrl;
    img.alt = tile.id;
    const caption = document.createElement("figcaption");
    caption.textContent = `#${tile.rank} d=${tile.distanceLabel}`;
    card.append(img, caption);
    card.addEventListener("click", () => selectTile(tile));
    gallery.appendChild(card);
  }
}

function selectTile(tile: GalleryTile) {
  state.selectedTile = tile;
  el<HTMLDivElement>("metadata").innerHTML = "";
  const rows: [string, string][] = [
    ["id", tile.id],
    ["distance", tile.distanceLabel],
    ["lesion type", tile.lesionType],
    ["patient", tile.patientId],
  ];
  const table = document.createElement("table");
  for (const [key, value] of rows) {
    const tr = document.createElement("tr");
    const th = document.createElement("th");
    th.textContent = key;
    const td = document.createElement("td");
    td.textContent = value;
    tr.append(th, td);
    table.appendChild(tr);
  }
  el<HTMLDivElement>("metadata").appendChild(table);
  el<HTMLInputElement>("annot-target").value = tile.id;
  drawAnnotationCanvas(tile.thumbnailUrl);
}

// ---------------------------------------------------------------------------
// drag & drop
// ---------------------------------------------------------------------------

function wireDropZone() {
  const zone = el<HTMLDivElement>("drop-zone");
  const preview = el<HTMLImageElement>("query-preview");
  const accept = (file: File) => {
    state.queryFile = file;
    preview.src = URL.createObjectURL(file);
    preview.hidden = false;
    setStatus(`query image: ${file.name}`);
  };
  zone.addEventListener("dragover", (e) => {
    e.preventDefault();
    zone.classList.add("hover");
  });
  zone.addEventListener("dragleave", () => zone.classList.remove("hover"));
  zone.addEventListener("drop", (e) => {
    e.preventDefault();
    zone.classList.remove("hover");
    const file = e.dataTransfer?.files?.[0];
    if (file) accept(file);
  });
  el<HTMLInputElement>("file-input").addEventListener("change", (e) => {
    const file = (e.target as HTMLInputElement).files?.[0];
    if (file) accept(file);
  });
}

// ---------------------------------------------------------------------------
// annotations
// ---------------------------------------------------------------------------

function canvasPoint(event: MouseEvent): [number, number] {
  const canvas = el<HTMLCanvasElement>("annot-canvas");
  const rect = canvas.getBoundingClientRect();
  const x = ((event.clientX - rect.left) / rect.width) * ROI_SIZE;
  const y = ((event.clientY - rect.top) / rect.height) * ROI_SIZE;
  const clamp = (v: number) => Math.min(ROI_SIZE, Math.max(0, Math.round(v * 10) / 10));
  return [clamp(x), clamp(y)];
}

function drawAnnotationCanvas(backgroundUrl?: string) {
  const canvas = el<HTMLCanvasElement>("annot-canvas");
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const paintShapes = () => {
    ctx.strokeStyle = "#ff5f56";
    ctx.fillStyle = "#ff5f56";
    ctx.lineWidth = 1.5;
    const sx = canvas.width / ROI_SIZE;
    const sy = canvas.height / ROI_SIZE;
    for (const shape of state.draftShapes) {
      const c = shape.coordinates;
      if (shape.kind === "box") {
        ctx.strokeRect(c[0] * sx, c[1] * sy, (c[2] - c[0]) * sx, (c[3] - c[1]) * sy);
      } else if (shape.kind === "point") {
        ctx.beginPath();
        ctx.arc(c[0] * sx, c[1] * sy, 3, 0, Math.PI * 2);
        ctx.fill();
      } else {
        ctx.beginPath();
        ctx.moveTo(c[0] * sx, c[1] * sy);
        for (let i = 2; i < c.length; i += 2) ctx.lineTo(c[i] * sx, c[i + 1] * sy);
        ctx.closePath();
        ctx.stroke();
      }
    }
    if (state.pendingPolygon.length >= 4) {
      ctx.setLineDash([4, 3]);
      ctx.beginPath();
      ctx.moveTo(state.pendingPolygon[0] * sx, state.pendingPolygon[1] * sy);
      for (let i = 2; i < state.pendingPolygon.length; i += 2) {
        ctx.lineTo(state.pendingPolygon[i] * sx, state.pendingPolygon[i + 1] * sy);
      }
      ctx.stroke();
      ctx.setLineDash([]);
    }
  };
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (backgroundUrl) {
    const img = new Image();
    img.onload = () => {
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
      paintShapes();
    };
    img.src = backgroundUrl;
  } else if (state.selectedTile) {
    drawAnnotationCanvas(state.selectedTile.thumbnailUrl);
    return;
  } else {
    paintShapes();
  }
}

function wireAnnotationTools() {
  const canvas = el<HTMLCanvasElement>("annot-canvas");
  canvas.addEventListener("mousedown", (e) => {
    if (state.tool === "box") state.dragStart = canvasPoint(e);
  });
  canvas.addEventListener("mouseup", (e) => {
    const point = canvasPoint(e);
    if (state.tool === "box" && state.dragStart) {
      const [x0, y0] = state.dragStart;
      const [x1, y1] = point;
      state.dragStart = null;
      if (Math.abs(x1 - x0) >= 1 && Math.abs(y1 - y0) >= 1) {
        state.draftShapes.push({
          kind: "box",
          coordinates: [
            Math.min(x0, x1),
            Math.min(y0, y1),
            Math.max(x0, x1),
            Math.max(y0, y1),
          ],
        });
      }
    } else if (state.tool === "point") {
      state.draftShapes.push({ kind: "point", coordinates: point });
    } else if (state.tool === "polygon") {
      state.pendingPolygon.push(...point);
    }
    drawAnnotationCanvas();
  });
  canvas.addEventListener("dblclick", () => {
    if (state.tool === "polygon" && state.pendingPolygon.length >= 6) {
      state.draftShapes.push({ kind: "polygon", coordinates: [...state.pendingPolygon] });
      state.pendingPolygon = [];
      drawAnnotationCanvas();
    }
  });
  for (const kind of ["box", "polygon", "point"] as ShapeKind[]) {
    el<HTMLButtonElement>(`tool-${kind}`).addEventListener("click", () => {
      state.tool = kind;
      state.pendingPolygon = [];
      document
        .querySelectorAll(".tool-btn")
        .forEach((b) => b.classList.toggle("active", b.id === `tool-${kind}`));
    });
  }
  el<HTMLButtonElement>("annot-clear").addEventListener("click", () => {
    state.draftShapes = [];
    state.pendingPolygon = [];
    drawAnnotationCanvas();
  });
}

function currentDraft(): AnnotationDraft {
  return {
    image_id: el<HTMLInputElement>("annot-target").value.trim(),
    shapes: state.draftShapes,
    label: el<HTMLInputElement>("annot-label").value.trim() || null,
    author: el<HTMLInputElement>("annot-author").value.trim(),
    created_at: new Date().toISOString(),
  };
}

function wireAnnotationSave() {
  const validated = (): AnnotationDraft | null => {
    const draft = currentDraft();
    const problems = validateAnnotationDraft(draft, ROI_SIZE);
    if (problems.length) {
      setStatus(problems.join("; "), true);
      return null;
    }
    return draft;
  };
  el<HTMLButtonElement>("annot-save-local").addEventListener("click", () => {
    const draft = validated();
    if (!draft) return;
    const blob = new Blob([serializeAnnotation(draft)], { type: "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = `${draft.image_id}-annotation.json`;
    link.click();
    setStatus("annotation saved locally");
  });
  el<HTMLButtonElement>("annot-send").addEventListener("click", async () => {
    const draft = validated();
    if (!draft) return;
    try {
      const reply = await api.postAnnotation(serializeAnnotation(draft));
      setStatus(`annotation stored (${reply.stored} total for ${reply.image_id})`);
    } catch (err) {
      if (err instanceof ApiError) setStatus(describeServerError(err.status, err.detail), true);
      else setStatus(String(err), true);
    }
  });
  el<HTMLInputElement>("annot-upload").addEventListener("change", async (e) => {
    const file = (e.target as HTMLInputElement).files?.[0];
    if (!file) return;
    try {
      const draft = parseAnnotationFile(await file.text());
      const problems = validateAnnotationDraft(draft, ROI_SIZE);
      if (problems.length) throw new Error(problems.join("; "));
      const reply = await api.postAnnotation(serializeAnnotation(draft));
      setStatus(`re-uploaded annotation (${reply.stored} total)`);
    } catch (err) {
      if (err instanceof ApiError) setStatus(describeServerError(err.status, err.detail), true);
      else setStatus(String(err), true);
    }
  });
}

// ---------------------------------------------------------------------------
// filter preview
// ---------------------------------------------------------------------------

function wireFilterPreview() {
  const slider = el<HTMLInputElement>("band-slider");
  const label = el<HTMLSpanElement>("band-label");
  const render = async () => {
    if (!state.queryFile) {
      setStatus("drop a query image first", true);
      return;
    }
    const band = slider.value === "-1" ? null : parseInt(slider.value, 10);
    label.textContent = band === null ? "full sweep" : `band ${band + 1}`;
    try {
      const result = await api.filterPreview(state.queryFile, state.queryFile.name, band, 4);
      el<HTMLImageElement>("preview-original").src = URL.createObjectURL(state.queryFile);
      el<HTMLImageElement>("preview-response").src = URL.createObjectURL(result.pngBlob);
      setStatus(
        `filter preview: sigmas ${result.info.scales[0]}–${
          result.info.scales[result.info.scales.length - 1]
        }`,
      );
    } catch (err) {
      if (err instanceof ApiError) setStatus(describeServerError(err.status, err.detail), true);
      else setStatus(String(err), true);
    }
  };
  slider.addEventListener("change", render);
  el<HTMLButtonElement>("preview-run").addEventListener("click", render);
}

// ---------------------------------------------------------------------------

export function start() {
  wireDropZone();
  wireAnnotationTools();
  wireAnnotationSave();
  wireFilterPreview();
  el<HTMLButtonElement>("query-run").addEventListener("click", runQuery);
  el<HTMLInputElement>("k-input").value = String(DEFAULT_SESSION.k);
  el<HTMLSelectElement>("setting-input").value = DEFAULT_SESSION.setting;
  api
    .stats()
    .then((s) => setStatus(`connected: ${s.count} indexed ROIs (v${s.index_version})`))
    .catch(() => setStatus("service unreachable", true));
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", start);
}

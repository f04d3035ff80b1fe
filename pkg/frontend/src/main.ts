/** DOM wiring: renders the view state, forwards control events to the API. */

import { ApiError, SkyClient } from "./api.js";
import { base64ToBytes, decodePfm, decodePpm, type FloatImage } from "./pfm.js";
import {
  canUndo,
  controlsEnabled,
  current,
  editCommitted,
  elevationEnabled,
  initialState,
  lossCurveNonIncreasing,
  pendingEdit,
  requestFailed,
  requestStarted,
  sessionOpened,
  setExposure,
  undo,
  type EditorViewState,
} from "./state.js";
import { drawSparkline } from "./sparkline.js";
import { tonemapToRgba } from "./tonemap.js";

const client = new SkyClient("");
let state: EditorViewState = initialState();
let cachedPano: FloatImage | null = null;
let relitPreviewB64: string | null = null;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

function setState(next: EditorViewState): void {
  state = next;
  render();
}

function drawPano(): void {
  const snap = current(state);
  const canvas = $<HTMLCanvasElement>("pano");
  const ctx = canvas.getContext("2d");
  if (!ctx || !snap) return;
  if (!cachedPano || state.history.indexOf(snap) !== state.cursor) {
    cachedPano = decodePfm(base64ToBytes(snap.panoPfmB64));
  }
  const img = cachedPano;
  const rgba = tonemapToRgba(img, state.exposure);
  const off = new ImageData(img.width, img.height);
  off.data.set(rgba);
  const tmp = document.createElement("canvas");
  tmp.width = img.width;
  tmp.height = img.height;
  tmp.getContext("2d")!.putImageData(off, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
  if (snap.sun) {
    const sx = ((snap.sun.azimuth + Math.PI) / (2 * Math.PI)) * canvas.width;
    const sy = ((Math.PI / 2 - snap.sun.elevation) / (Math.PI / 2)) * canvas.height;
    ctx.strokeStyle = "#ffec3d";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(sx, sy, 9, 0, 2 * Math.PI);
    ctx.stroke();
  }
}

function drawRelit(): void {
  const canvas = $<HTMLCanvasElement>("relit");
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!relitPreviewB64) return;
  const img = decodePpm(base64ToBytes(relitPreviewB64));
  const rgba = new Uint8ClampedArray(img.width * img.height * 4);
  for (let i = 0; i < img.width * img.height; i++) {
    rgba[i * 4] = img.data[i * 3];
    rgba[i * 4 + 1] = img.data[i * 3 + 1];
    rgba[i * 4 + 2] = img.data[i * 3 + 2];
    rgba[i * 4 + 3] = 255;
  }
  const off = new ImageData(img.width, img.height);
  off.data.set(rgba);
  const tmp = document.createElement("canvas");
  tmp.width = img.width;
  tmp.height = img.height;
  tmp.getContext("2d")!.putImageData(off, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function render(): void {
  const snap = current(state);
  $<HTMLDivElement>("status").textContent = state.busy
    ? "working…"
    : state.error ?? (snap ? "ready" : "load a sky to begin");
  $<HTMLDivElement>("no-sun-badge").style.display =
    snap && snap.sun === null ? "inline-block" : "none";
  $<HTMLButtonElement>("commit").disabled = !controlsEnabled(state) || pendingEdit(state) === null;
  $<HTMLButtonElement>("undo").disabled = !controlsEnabled(state) || !canUndo(state);
  $<HTMLInputElement>("elevation").disabled = !elevationEnabled(state);
  $<HTMLInputElement>("intensity").disabled = !controlsEnabled(state);
  const curve = snap?.lossCurve ?? [];
  drawSparkline($<HTMLCanvasElement>("sparkline"), curve);
  $<HTMLDivElement>("curve-note").textContent =
    curve.length > 1
      ? `${curve.length - 1} accepted steps, ${
          lossCurveNonIncreasing(curve) ? "non-increasing" : "NOT monotone"
        }`
      : "";
  if (snap) drawPano();
  drawRelit();
}

async function openSessionFromLatent(z: number[]): Promise<void> {
  setState(requestStarted(state));
  try {
    const resp = await client.createSession({ z });
    cachedPano = null;
    relitPreviewB64 = null;
    setState(sessionOpened(state, resp));
  } catch (err) {
    setState(requestFailed(state, describe(err)));
  }
}

async function openSessionFromFile(file: File): Promise<void> {
  setState(requestStarted(state));
  try {
    const bytes = new Uint8Array(await file.arrayBuffer());
    decodePfm(bytes); // reject malformed files before any session is created
    const b64 = btoa(String.fromCharCode(...bytes));
    const resp = await client.createSession({ pano_pfm_b64: b64 });
    cachedPano = null;
    relitPreviewB64 = null;
    setState(sessionOpened(state, resp));
  } catch (err) {
    setState(requestFailed(state, describe(err)));
  }
}

async function estimateFromCrop(file: File): Promise<void> {
  setState(requestStarted(state));
  try {
    const bytes = new Uint8Array(await file.arrayBuffer());
    decodePfm(bytes);
    const b64 = btoa(String.fromCharCode(...bytes));
    const est = await client.estimate(b64);
    const resp = await client.createSession({ z: est.z });
    cachedPano = null;
    relitPreviewB64 = null;
    setState(sessionOpened(state, resp));
  } catch (err) {
    setState(requestFailed(state, describe(err)));
  }
}

async function commit(): Promise<void> {
  const edit = pendingEdit(state);
  if (!edit || !state.sessionId || state.busy) return;
  setState(requestStarted(state));
  try {
    const resp = await client.edit(state.sessionId, { ...edit, max_iterations: 300 });
    cachedPano = null;
    relitPreviewB64 = resp.relit_preview_ppm_b64;
    const next = editCommitted(state, resp);
    setState({ ...next, pendingElevationDeg: 0, pendingIntensityFactor: 1.0 });
    $<HTMLInputElement>("elevation").value = "0";
    $<HTMLInputElement>("intensity").value = "1";
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      setState(requestFailed(state, "model changed; reload the session"));
    } else {
      setState(requestFailed(state, describe(err)));
    }
  }
}

async function undoEdit(): Promise<void> {
  if (!canUndo(state) || state.busy) return;
  const prior = state.history[state.cursor - 1];
  setState(requestStarted(state));
  try {
    // restore by opening a fresh session seeded with the prior code
    const resp = await client.createSession({ z: prior.z });
    cachedPano = null;
    relitPreviewB64 = null;
    const undone = undo({ ...state, busy: false });
    setState({ ...undone, sessionId: resp.session_id, busy: false, error: null });
  } catch (err) {
    setState(requestFailed(state, describe(err)));
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `server: ${err.message} (${err.status})`;
  return err instanceof Error ? err.message : String(err);
}

export function wire(): void {
  $<HTMLButtonElement>("load-zero").addEventListener("click", () =>
    openSessionFromLatent(new Array(64).fill(0)),
  );
  $<HTMLInputElement>("file").addEventListener("change", (ev) => {
    const input = ev.target as HTMLInputElement;
    if (input.files && input.files[0]) void openSessionFromFile(input.files[0]);
  });
  $<HTMLInputElement>("crop-file").addEventListener("change", (ev) => {
    const input = ev.target as HTMLInputElement;
    if (input.files && input.files[0]) void estimateFromCrop(input.files[0]);
  });
  $<HTMLInputElement>("exposure").addEventListener("input", (ev) => {
    const v = parseFloat((ev.target as HTMLInputElement).value);
    setState(setExposure(state, Math.pow(10, v)));
  });
  $<HTMLInputElement>("elevation").addEventListener("input", (ev) => {
    state = { ...state, pendingElevationDeg: parseFloat((ev.target as HTMLInputElement).value) };
    render();
  });
  $<HTMLInputElement>("intensity").addEventListener("input", (ev) => {
    state = { ...state, pendingIntensityFactor: parseFloat((ev.target as HTMLInputElement).value) };
    render();
  });
  $<HTMLButtonElement>("commit").addEventListener("click", () => void commit());
  $<HTMLButtonElement>("undo").addEventListener("click", () => void undoEdit());
  render();
}

if (typeof document !== "undefined" && document.getElementById("pano")) {
  wire();
}

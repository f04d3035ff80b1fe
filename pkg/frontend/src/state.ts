/**
 * Editor view state and its pure transitions.
 *
 * The state is derived entirely from session history entries (server
 * responses) plus local display settings; the DOM layer only renders it.
 * History is append-only: undo pops the cursor back, and committing after an
 * undo rebases onto a fresh session holding the restored code.
 */

import type { EditResponse, SessionResponse, SunInfo } from "./api.js";

export interface Snapshot {
  z: number[];
  panoPfmB64: string;
  sun: SunInfo | null;
  lossCurve: number[];
}

export interface EditorViewState {
  sessionId: string | null;
  modelVersion: string | null;
  history: Snapshot[];
  cursor: number; // index of the visible snapshot in history
  exposure: number;
  busy: boolean;
  error: string | null;
  pendingElevationDeg: number;
  pendingIntensityFactor: number;
}

export function initialState(): EditorViewState {
  return {
    sessionId: null,
    modelVersion: null,
    history: [],
    cursor: -1,
    exposure: 1.0,
    busy: false,
    error: null,
    pendingElevationDeg: 0,
    pendingIntensityFactor: 1.0,
  };
}

export function current(state: EditorViewState): Snapshot | null {
  return state.cursor >= 0 ? state.history[state.cursor] : null;
}

export function sessionOpened(state: EditorViewState, resp: SessionResponse): EditorViewState {
  const snapshot: Snapshot = {
    z: resp.z,
    panoPfmB64: resp.pano_pfm_b64,
    sun: resp.sun,
    lossCurve: [],
  };
  return {
    ...state,
    sessionId: resp.session_id,
    modelVersion: resp.model_version,
    history: [snapshot],
    cursor: 0,
    busy: false,
    error: null,
  };
}

export function editCommitted(state: EditorViewState, resp: EditResponse): EditorViewState {
  const snapshot: Snapshot = {
    z: resp.z,
    panoPfmB64: resp.pano_pfm_b64,
    sun: resp.sun,
    lossCurve: resp.loss_curve,
  };
  const history = [...state.history.slice(0, state.cursor + 1), snapshot];
  return { ...state, history, cursor: history.length - 1, busy: false, error: null };
}

export function undo(state: EditorViewState): EditorViewState {
  if (state.cursor <= 0) return state;
  return { ...state, cursor: state.cursor - 1 };
}

export function canUndo(state: EditorViewState): boolean {
  return state.cursor > 0;
}

export function requestStarted(state: EditorViewState): EditorViewState {
  return { ...state, busy: true, error: null };
}

export function requestFailed(state: EditorViewState, message: string): EditorViewState {
  return { ...state, busy: false, error: message };
}

/** Controls are live only with an open session and no request in flight. */
export function controlsEnabled(state: EditorViewState): boolean {
  return state.sessionId !== null && !state.busy;
}

/** Elevation edits need a detected sun in the current sky. */
export function elevationEnabled(state: EditorViewState): boolean {
  const snap = current(state);
  return controlsEnabled(state) && snap !== null && snap.sun !== null;
}

/**
 * The edit request a commit would produce, or null when it is the identity
 * (the UI suppresses identity commits entirely).
 */
export function pendingEdit(
  state: EditorViewState,
): { kind: "elevation" | "intensity"; target: number; intensity_mode?: "multiplier" } | null {
  const snap = current(state);
  if (!snap) return null;
  if (state.pendingElevationDeg !== 0) {
    if (!snap.sun) return null;
    const target = Math.min(
      Math.max(snap.sun.elevation + (state.pendingElevationDeg * Math.PI) / 180, 0),
      Math.PI / 2,
    );
    return { kind: "elevation", target };
  }
  if (state.pendingIntensityFactor !== 1.0) {
    return {
      kind: "intensity",
      target: state.pendingIntensityFactor,
      intensity_mode: "multiplier",
    };
  }
  return null;
}

export function setExposure(state: EditorViewState, exposure: number): EditorViewState {
  return { ...state, exposure: Math.max(exposure, 1e-3) };
}

/** True when every adjacent pair of the loss curve is non-increasing. */
export function lossCurveNonIncreasing(curve: number[]): boolean {
  for (let i = 1; i < curve.length; i++) {
    if (curve[i] > curve[i - 1] + 1e-9) return false;
  }
  return true;
}

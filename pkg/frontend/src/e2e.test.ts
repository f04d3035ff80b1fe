/**
 * End-to-end editing flow against a live trained server.
 *
 * Skipped unless SKYFORGE_SERVER_URL points at a running service with a
 * trained sky model (see README: `skyforge serve ...`). Exercises the full
 * loop the UI drives: open a session, commit a +10 degree elevation edit,
 * verify the sun marker moved toward the zenith and the loss sparkline is
 * non-increasing, then undo back to the original code.
 */

import { describe, expect, it } from "vitest";

import { SkyClient } from "./api.js";
import { base64ToBytes, decodePfm } from "./pfm.js";
import {
  current,
  editCommitted,
  initialState,
  lossCurveNonIncreasing,
  sessionOpened,
  undo,
} from "./state.js";

const SERVER = process.env.SKYFORGE_SERVER_URL;

describe.skipIf(!SERVER)("live editing session", () => {
  it("elevation edit raises the sun and undo restores it", async () => {
    const client = new SkyClient(SERVER);
    const sunnyZ: number[] = JSON.parse(process.env.SKYFORGE_E2E_Z ?? "null");
    const session = await client.createSession(sunnyZ ? { z: sunnyZ } : {});
    let state = sessionOpened(initialState(), session);
    const snap = current(state)!;
    expect(snap.sun).not.toBeNull();
    const startElevation = snap.sun!.elevation;

    const resp = await client.edit(session.session_id, {
      kind: "elevation",
      target: Math.min(startElevation + (10 * Math.PI) / 180, Math.PI / 2),
      max_iterations: 300,
    });
    state = editCommitted(state, resp);
    const after = current(state)!;
    expect(after.sun).not.toBeNull();
    expect(after.sun!.elevation).toBeGreaterThan(startElevation);
    expect(lossCurveNonIncreasing(after.lossCurve)).toBe(true);
    const pano = decodePfm(base64ToBytes(after.panoPfmB64));
    expect(pano.width).toBe(128);

    state = undo(state);
    expect(current(state)!.z).toEqual(session.z);
    const restored = await client.createSession({ z: current(state)!.z });
    expect(restored.sun!.elevation).toBeCloseTo(startElevation, 6);
  }, 120_000);
});

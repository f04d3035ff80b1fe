/** Typed client for the sky service JSON endpoints. */

export interface SunInfo {
  azimuth: number;
  elevation: number;
}

export interface PanoResponse {
  pano_pfm_b64: string;
  preview_ppm_b64: string;
  sun: SunInfo | null;
  model_version: string;
}

export interface SessionResponse extends PanoResponse {
  session_id: string;
  z: number[];
}

export interface EditResponse extends PanoResponse {
  z: number[];
  loss_curve: number[];
  stop_reason: string;
  relit_preview_ppm_b64: string;
}

export interface EstimateResponse extends PanoResponse {
  z: number[];
  azimuth_bins: number[];
  azimuth_rad: number;
  elevation_rad: number;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function post<T>(base: string, path: string, body: unknown): Promise<T> {
  const resp = await fetch(`${base}${path}`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const payload = await resp.json();
      detail = payload.detail ?? detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class SkyClient {
  constructor(readonly base: string = "") {}

  health(): Promise<{ status: string; model_versions: Record<string, unknown> }> {
    return fetch(`${this.base}/health`).then((r) => r.json());
  }

  decode(z: number[], exposure = 1.0): Promise<PanoResponse> {
    return post(this.base, "/decode", { z, exposure });
  }

  encode(panoPfmB64: string): Promise<{ z: number[] }> {
    return post(this.base, "/encode", { pano_pfm_b64: panoPfmB64 });
  }

  estimate(imagePfmB64: string): Promise<EstimateResponse> {
    return post(this.base, "/estimate", { image_pfm_b64: imagePfmB64 });
  }

  createSession(init: { z?: number[]; pano_pfm_b64?: string }): Promise<SessionResponse> {
    return post(this.base, "/session", init);
  }

  edit(
    sessionId: string,
    request: {
      kind: "elevation" | "intensity";
      target: number;
      intensity_mode?: "absolute" | "multiplier";
      max_iterations?: number;
      eta?: number;
    },
  ): Promise<EditResponse> {
    return post(this.base, `/session/${sessionId}/edit`, request);
  }

  relight(z: number[], exposure = 1.0): Promise<{ image_ppm_b64: string }> {
    return post(this.base, "/relight", { z, exposure });
  }
}

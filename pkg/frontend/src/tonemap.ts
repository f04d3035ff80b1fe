/**
 * Client-side display mapping of cached linear radiance. This is the only
 * numeric lighting computation allowed in the browser: everything else is a
 * render of server responses.
 */

import type { FloatImage } from "./pfm.js";

export const MIN_EXPOSURE = 1e-3;

/** clamp(exposure * L, 0, 1) ^ (1 / gamma), quantized to bytes (RGBA). */
export function tonemapToRgba(
  image: FloatImage,
  exposure: number,
  gamma = 2.2,
): Uint8ClampedArray {
  const e = Math.max(exposure, MIN_EXPOSURE);
  const inv = 1.0 / gamma;
  const n = image.width * image.height;
  const out = new Uint8ClampedArray(n * 4);
  for (let i = 0; i < n; i++) {
    for (let c = 0; c < 3; c++) {
      const v = Math.min(Math.max(image.data[i * 3 + c] * e, 0), 1);
      out[i * 4 + c] = Math.round(Math.pow(v, inv) * 255);
    }
    out[i * 4 + 3] = 255;
  }
  return out;
}

/** Mean tone-mapped luminance; used to sanity-check monotonicity in tests. */
export function meanMappedLuminance(image: FloatImage, exposure: number): number {
  const rgba = tonemapToRgba(image, exposure);
  let total = 0;
  const n = image.width * image.height;
  for (let i = 0; i < n; i++) {
    total += (rgba[i * 4] + rgba[i * 4 + 1] + rgba[i * 4 + 2]) / 3;
  }
  return total / n;
}

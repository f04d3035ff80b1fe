import { describe, expect, it } from "vitest";

import type { FloatImage } from "./pfm.js";
import { MIN_EXPOSURE, meanMappedLuminance, tonemapToRgba } from "./tonemap.js";

function constantImage(value: number, n = 4): FloatImage {
  return { width: n, height: 1, data: new Float32Array(3 * n).fill(value) };
}

describe("tonemapToRgba", () => {
  it("maps black to zero", () => {
    const rgba = tonemapToRgba(constantImage(0), 1.0);
    expect(rgba[0]).toBe(0);
    expect(rgba[3]).toBe(255);
  });

  it("clamps at the exposure boundary", () => {
    const rgba = tonemapToRgba(constantImage(4.0), 0.25, 1.0);
    expect(rgba[0]).toBe(255);
  });

  it("matches the midtone arithmetic", () => {
    const rgba = tonemapToRgba(constantImage(0.25), 1.0, 2.0);
    expect(rgba[0]).toBe(128); // round(255 * 0.25^(1/2))
  });

  it("guards tiny exposures", () => {
    const lo = tonemapToRgba(constantImage(1.0), 0);
    const ref = tonemapToRgba(constantImage(1.0), MIN_EXPOSURE);
    expect(Array.from(lo)).toEqual(Array.from(ref));
  });

  it("brightens monotonically with exposure", () => {
    const img = constantImage(0.2);
    const a = meanMappedLuminance(img, 0.5);
    const b = meanMappedLuminance(img, 1.0);
    const c = meanMappedLuminance(img, 2.0);
    expect(b).toBeGreaterThan(a);
    expect(c).toBeGreaterThan(b);
  });
});

import { describe, expect, it } from "vitest";

import { decodePfm, decodePpm } from "./pfm.js";

function makePfm(width: number, height: number, values: number[]): Uint8Array {
  const header = new TextEncoder().encode(`PF\n${width} ${height}\n-1.0\n`);
  const payload = new Float32Array(values); // bottom row first
  const out = new Uint8Array(header.length + payload.byteLength);
  out.set(header, 0);
  out.set(new Uint8Array(payload.buffer), header.length);
  return out;
}

describe("decodePfm", () => {
  it("decodes and flips scanlines to top-first", () => {
    // 1x2: bottom row (1,2,3), top row (4,5,6)
    const bytes = makePfm(1, 2, [1, 2, 3, 4, 5, 6]);
    const img = decodePfm(bytes);
    expect(img.width).toBe(1);
    expect(img.height).toBe(2);
    expect(Array.from(img.data)).toEqual([4, 5, 6, 1, 2, 3]);
  });

  it("rejects truncated payloads with byte counts", () => {
    const bytes = makePfm(2, 2, [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]);
    expect(() => decodePfm(bytes.subarray(0, bytes.length - 4))).toThrow(/expected 48/);
  });

  it("rejects wrong magic", () => {
    const bytes = makePfm(1, 1, [0, 0, 0]);
    bytes[1] = "X".charCodeAt(0);
    expect(() => decodePfm(bytes)).toThrow(/magic/);
  });
});

describe("decodePpm", () => {
  it("decodes top-first RGB bytes", () => {
    const header = new TextEncoder().encode("P6\n2 1\n255\n");
    const out = new Uint8Array(header.length + 6);
    out.set(header, 0);
    out.set([10, 20, 30, 40, 50, 60], header.length);
    const img = decodePpm(out);
    expect(img.width).toBe(2);
    expect(Array.from(img.data)).toEqual([10, 20, 30, 40, 50, 60]);
  });

  it("rejects truncation", () => {
    const header = new TextEncoder().encode("P6\n2 1\n255\n");
    const out = new Uint8Array(header.length + 5);
    out.set(header, 0);
    expect(() => decodePpm(out)).toThrow(/expected 6/);
  });
});

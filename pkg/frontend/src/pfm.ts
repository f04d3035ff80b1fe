/**
 * Decoders for the little binary formats the service returns inside JSON:
 * PFM (linear float radiance) and PPM (8-bit preview).
 */

export interface FloatImage {
  width: number;
  height: number;
  /** RGB interleaved, row 0 first (top). */
  data: Float32Array;
}

export interface ByteImage {
  width: number;
  height: number;
  data: Uint8ClampedArray; // RGB interleaved
}

export function base64ToBytes(b64: string): Uint8Array {
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

function readToken(bytes: Uint8Array, pos: number): [string, number] {
  while (pos < bytes.length && isSpace(bytes[pos])) pos++;
  const start = pos;
  while (pos < bytes.length && !isSpace(bytes[pos])) pos++;
  if (start === pos) throw new Error("unexpected end of header");
  return [String.fromCharCode(...bytes.subarray(start, pos)), pos];
}

function isSpace(c: number): boolean {
  return c === 0x20 || c === 0x0a || c === 0x0d || c === 0x09;
}

/** Decode a color PFM (bottom-to-top scanlines) into top-first float RGB. */
export function decodePfm(bytes: Uint8Array): FloatImage {
  let pos = 0;
  let magic: string, wTok: string, hTok: string, scaleTok: string;
  [magic, pos] = readToken(bytes, pos);
  if (magic !== "PF") throw new Error(`unsupported PFM magic ${magic}`);
  [wTok, pos] = readToken(bytes, pos);
  [hTok, pos] = readToken(bytes, pos);
  [scaleTok, pos] = readToken(bytes, pos);
  const width = parseInt(wTok, 10);
  const height = parseInt(hTok, 10);
  const scale = parseFloat(scaleTok);
  if (!Number.isFinite(width) || !Number.isFinite(height) || width < 1 || height < 1) {
    throw new Error(`bad PFM dimensions ${wTok} x ${hTok}`);
  }
  pos += 1; // single whitespace terminates the header
  const expected = width * height * 3 * 4;
  if (bytes.length - pos !== expected) {
    throw new Error(`PFM payload has ${bytes.length - pos} bytes, expected ${expected}`);
  }
  const littleEndian = scale < 0;
  const view = new DataView(bytes.buffer, bytes.byteOffset + pos, expected);
  const data = new Float32Array(width * height * 3);
  for (let row = 0; row < height; row++) {
    const srcRow = height - 1 - row; // stored bottom-to-top
    for (let i = 0; i < width * 3; i++) {
      data[row * width * 3 + i] = view.getFloat32((srcRow * width * 3 + i) * 4, littleEndian);
    }
  }
  return { width, height, data };
}

/** Decode a binary P6 PPM into RGB bytes. */
export function decodePpm(bytes: Uint8Array): ByteImage {
  let pos = 0;
  let magic: string, wTok: string, hTok: string, maxTok: string;
  [magic, pos] = readToken(bytes, pos);
  if (magic !== "P6") throw new Error(`unsupported PPM magic ${magic}`);
  [wTok, pos] = readToken(bytes, pos);
  [hTok, pos] = readToken(bytes, pos);
  [maxTok, pos] = readToken(bytes, pos);
  const width = parseInt(wTok, 10);
  const height = parseInt(hTok, 10);
  if (parseInt(maxTok, 10) !== 255) throw new Error("only maxval 255 PPM is supported");
  pos += 1;
  const expected = width * height * 3;
  if (bytes.length - pos !== expected) {
    throw new Error(`PPM payload has ${bytes.length - pos} bytes, expected ${expected}`);
  }
  return { width, height, data: new Uint8ClampedArray(bytes.subarray(pos, pos + expected)) };
}

"""Lossless float image I/O (PFM) plus PGM masks and PPM previews.

PFM layout written here: ASCII header ``PF\\n{width} {height}\\n-1.0\\n``, then
``height`` scanlines bottom-to-top, each ``width * 3`` little-endian float32.
A negative scale factor marks little-endian per the PFM convention.
"""

from __future__ import annotations

import os

import numpy as np


class CodecError(ValueError):
    """Malformed or truncated image payload."""


def write_pfm(image: np.ndarray) -> bytes:
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise CodecError(f"PFM writer expects (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise CodecError("refusing to write non-finite values to PFM")
    h, w, _ = arr.shape
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    return header + arr[::-1].astype("<f4").tobytes()


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(data) and data[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(data) and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise CodecError("unexpected end of header")
    return data[start:pos], pos


def read_pfm(data: bytes) -> np.ndarray:
    """Decode a color PFM into an (H, W, 3) float32 array, top row first."""
    magic, pos = _read_token(data, 0)
    if magic != b"PF":
        raise CodecError(f"unsupported PFM magic {magic!r} (only color 'PF' is handled)")
    try:
        w_tok, pos = _read_token(data, pos)
        h_tok, pos = _read_token(data, pos)
        scale_tok, pos = _read_token(data, pos)
        width, height = int(w_tok), int(h_tok)
        scale = float(scale_tok)
    except ValueError as exc:
        raise CodecError(f"malformed PFM header: {exc}") from exc
    if width < 1 or height < 1:
        raise CodecError(f"invalid PFM dimensions {width}x{height}")
    if scale == 0.0:
        raise CodecError("PFM scale factor must be non-zero")
    payload = data[pos + 1 :]  # single whitespace byte terminates the header
    expected = width * height * 3 * 4
    if len(payload) != expected:
        raise CodecError(
            f"PFM payload has {len(payload)} bytes, expected {expected} "
            f"for {width}x{height}x3 float32"
        )
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width, 3)
    return arr[::-1].astype(np.float32)


def _read_pnm_header(data: bytes, magic: bytes) -> tuple[int, int, int, int]:
    got, pos = _read_token(data, 0)
    if got != magic:
        raise CodecError(f"expected {magic!r} header, got {got!r}")
    w_tok, pos = _read_token(data, pos)
    h_tok, pos = _read_token(data, pos)
    maxval_tok, pos = _read_token(data, pos)
    width, height, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    if maxval != 255:
        raise CodecError(f"only maxval 255 is supported, got {maxval}")
    return width, height, maxval, pos + 1


def write_pgm_mask(mask_data: np.ndarray) -> bytes:
    """Binary PGM with 255 = sky, 0 = occluded."""
    arr = np.asarray(mask_data, dtype=bool)
    if arr.ndim != 2:
        raise CodecError(f"mask must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + (arr.astype(np.uint8) * 255).tobytes()


def read_pgm_mask(data: bytes) -> np.ndarray:
    width, height, _, pos = _read_pnm_header(data, b"P5")
    payload = data[pos:]
    expected = width * height
    if len(payload) != expected:
        raise CodecError(f"PGM payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return arr >= 128


def write_ppm(image: np.ndarray) -> bytes:
    """Binary 8-bit RGB PPM (P6) for tone-mapped previews."""
    arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise CodecError(f"PPM writer expects (H, W, 3) uint8, got {arr.shape}")
    h, w, _ = arr.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    width, height, _, pos = _read_pnm_header(data, b"P6")
    payload = data[pos:]
    expected = width * height * 3
    if len(payload) != expected:
        raise CodecError(f"PPM payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def write_file(path: str | os.PathLike, payload: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(payload)


def read_file(path: str | os.PathLike) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()

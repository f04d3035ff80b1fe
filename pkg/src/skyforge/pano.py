"""Equirectangular upper-hemisphere sky panoramas.

Geometry conventions used throughout:

* row 0 touches the zenith, row ``height - 1`` touches the horizon; row ``r``
  spans polar angle ``[r, r+1] * (pi/2) / height``;
* column ``c`` spans azimuth ``[-pi + c * 2pi/width, -pi + (c+1) * 2pi/width)``;
* directions are unit vectors ``(cos(az) sin(th), sin(az) sin(th), cos(th))``
  with ``z`` up, so azimuth is ``atan2(y, x)`` and elevation is ``pi/2 - th``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NoDistinctSun(ValueError):
    """Raised when a panorama has no sufficiently bright, localized sun region."""


def _as_radiance(data: np.ndarray) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"panorama data must be (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("panorama radiance must be finite")
    if arr.min() < 0:
        raise ValueError("panorama radiance must be non-negative")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SkyPanorama:
    """Linear-RGB radiance over the upper hemisphere, zenith at row 0."""

    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _as_radiance(self.data))
        h, w, _ = self.data.shape
        if w != 4 * h:
            raise ValueError(f"width must be 4x height, got {h}x{w}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def luminance(self) -> np.ndarray:
        """Per-texel mean of the RGB channels, shape (H, W)."""
        return self.data.mean(axis=2)


@dataclass(frozen=True)
class SkyMask:
    """Boolean sky visibility grid; True = sky visible, False = occluded."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=bool).copy()
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def all_sky(cls, height: int, width: int) -> "SkyMask":
        return cls(np.ones((height, width), dtype=bool))

    def fraction_occluded(self) -> float:
        return float(1.0 - self.data.mean())


@dataclass(frozen=True)
class SunPosition:
    """Sun direction as azimuth in [-pi, pi) and elevation in [0, pi/2]."""

    azimuth: float
    elevation: float

    def __post_init__(self) -> None:
        if not (-np.pi <= self.azimuth < np.pi):
            raise ValueError(f"azimuth {self.azimuth} outside [-pi, pi)")
        if not (0.0 <= self.elevation <= np.pi / 2 + 1e-12):
            raise ValueError(f"elevation {self.elevation} outside [0, pi/2]")

    def direction(self) -> np.ndarray:
        return direction_from_angles(self.azimuth, self.elevation)


@dataclass(frozen=True)
class SolidAngleMap:
    """Per-row texel solid angles in steradians (constant across a row)."""

    height: int
    width: int
    row_values: np.ndarray = field(repr=False)

    def grid(self) -> np.ndarray:
        """Expand to a full (H, W) array."""
        return np.repeat(self.row_values[:, None], self.width, axis=1)

    def total(self) -> float:
        return float(self.row_values.sum() * self.width)


def solid_angle_map(height: int, width: int) -> SolidAngleMap:
    """Closed-form per-row solid angle dOmega = (2pi/W) (cos th_top - cos th_bot)."""
    if height < 1 or width < 1:
        raise ValueError(f"dimensions must be positive, got {height}x{width}")
    r = np.arange(height, dtype=np.float64)
    theta_top = r * (np.pi / 2) / height
    theta_bot = (r + 1) * (np.pi / 2) / height
    rows = (2 * np.pi / width) * (np.cos(theta_top) - np.cos(theta_bot))
    rows.flags.writeable = False
    return SolidAngleMap(height=height, width=width, row_values=rows)


def direction_from_angles(azimuth: float, elevation: float) -> np.ndarray:
    theta = np.pi / 2 - elevation
    return np.array(
        [np.cos(azimuth) * np.sin(theta), np.sin(azimuth) * np.sin(theta), np.cos(theta)],
        dtype=np.float64,
    )


def angles_from_direction(direction: np.ndarray) -> tuple[float, float]:
    """Return (azimuth in [-pi, pi), elevation) of a direction with z >= 0."""
    x, y, z = (float(v) for v in direction)
    azimuth = float(np.arctan2(y, x))
    if azimuth >= np.pi:
        azimuth -= 2 * np.pi
    elevation = float(np.arctan2(z, np.hypot(x, y)))
    return azimuth, float(np.clip(elevation, 0.0, np.pi / 2))


def texel_centers(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Polar angles (H,) and azimuths (W,) of texel centers."""
    theta = (np.arange(height) + 0.5) * (np.pi / 2) / height
    azimuth = -np.pi + (np.arange(width) + 0.5) * (2 * np.pi / width)
    return theta, azimuth


def texel_directions(height: int, width: int) -> np.ndarray:
    """Unit direction of every texel center, shape (H, W, 3)."""
    theta, azimuth = texel_centers(height, width)
    sin_t = np.sin(theta)[:, None]
    return np.stack(
        [
            np.cos(azimuth)[None, :] * sin_t,
            np.sin(azimuth)[None, :] * sin_t,
            np.broadcast_to(np.cos(theta)[:, None], (height, width)),
        ],
        axis=2,
    )


def integrate(pano: SkyPanorama) -> np.ndarray:
    """Per-channel integral sum(L * dOmega), shape (3,) float64."""
    dom = solid_angle_map(pano.height, pano.width)
    return np.einsum("hwc,h->c", pano.data.astype(np.float64), dom.row_values)


def rotate_azimuth(pano: SkyPanorama, k: int) -> SkyPanorama:
    """Shift columns so output column c holds input column (c - k) mod width."""
    return SkyPanorama(np.roll(pano.data, int(k), axis=1))


def rotate_mask(mask: SkyMask, k: int) -> SkyMask:
    return SkyMask(np.roll(mask.data, int(k), axis=1))


def detect_sun(
    pano: SkyPanorama,
    percentile: float = 98.0,
    distinctness_ratio: float = 10.0,
) -> SunPosition:
    """Locate the sun as the dOmega-weighted centroid of the brightest texels.

    Texels at or above the given luminance percentile form the bright region;
    the centroid of their center directions (weighted by luminance * dOmega)
    is converted back to azimuth/elevation. The vector mean makes the azimuth
    wraparound-safe. Raises NoDistinctSun when the luminance peak is less than
    ``distinctness_ratio`` times the mean.
    """
    lum = pano.luminance().astype(np.float64)
    peak = float(lum.max())
    if peak <= 0.0 or peak < distinctness_ratio * float(lum.mean()):
        raise NoDistinctSun(
            f"peak/mean luminance ratio below {distinctness_ratio} (no localized sun)"
        )
    threshold = np.percentile(lum, percentile)
    selected = lum >= threshold
    dom = solid_angle_map(pano.height, pano.width).grid()
    weights = (lum * dom)[selected]
    dirs = texel_directions(pano.height, pano.width)[selected]
    mean_dir = (weights[:, None] * dirs).sum(axis=0) / weights.sum()
    azimuth, elevation = angles_from_direction(mean_dir)
    return SunPosition(azimuth=azimuth, elevation=elevation)


def _azimuth_grid_coordinate(azimuth: float, width: int) -> float:
    return (azimuth + np.pi) * width / (2 * np.pi)


def centering_shift(azimuth: float, width: int) -> int:
    """Column shift that moves content at ``azimuth`` onto the central column
    boundary (between columns width/2 - 1 and width/2, i.e. azimuth 0)."""
    u = _azimuth_grid_coordinate(azimuth, width)
    return int(np.floor(width / 2 - u + 0.5))


def azimuth_to_column_shift(azimuth: float, width: int) -> int:
    """Inverse of :func:`centering_shift`: shift restoring centered content to
    ``azimuth``."""
    return -centering_shift(azimuth, width)


def center_sun(
    pano: SkyPanorama,
    percentile: float = 98.0,
    distinctness_ratio: float = 10.0,
) -> tuple[SkyPanorama, float]:
    """Rotate so the detected sun sits in the central column pair.

    Returns the rotated panorama and the pre-rotation sun azimuth, which makes
    the rotation invertible via :func:`azimuth_to_column_shift`.
    """
    sun = detect_sun(pano, percentile=percentile, distinctness_ratio=distinctness_ratio)
    k = centering_shift(sun.azimuth, pano.width)
    return rotate_azimuth(pano, k), sun.azimuth


def _interval_overlap_matrix(edges_out: np.ndarray, edges_in: np.ndarray) -> np.ndarray:
    """Row-stochastic matrix of interval overlaps, rows = output cells.

    ``edges_*`` are monotonically increasing cell boundaries covering the same
    range. Entry (i, j) is the fraction of output cell i covered by input
    cell j, so rows sum to 1 and constants are preserved.
    """
    lo = np.maximum(edges_out[:-1, None], edges_in[None, :-1])
    hi = np.minimum(edges_out[1:, None], edges_in[None, 1:])
    overlap = np.clip(hi - lo, 0.0, None)
    return overlap / np.diff(edges_out)[:, None]


def resize_energy_preserving(pano: SkyPanorama, new_height: int, new_width: int) -> SkyPanorama:
    """Box-filter resample in the (cos theta, azimuth) measure.

    Each output texel is the dOmega-weighted average of the input texels it
    overlaps, which conserves the per-channel sky integral by construction.
    """
    if new_height < 1 or new_width < 1:
        raise ValueError(f"dimensions must be positive, got {new_height}x{new_width}")
    h, w = pano.height, pano.width
    # vertical measure is cos(theta): edges run 0..1 from horizon to zenith
    v_in = np.cos(np.arange(h, -1, -1) * (np.pi / 2) / h)
    v_out = np.cos(np.arange(new_height, -1, -1) * (np.pi / 2) / new_height)
    rows = _interval_overlap_matrix(v_out, v_in)[::-1, ::-1]  # back to zenith-first order
    u_in = np.arange(w + 1) * (2 * np.pi / w)
    u_out = np.arange(new_width + 1) * (2 * np.pi / new_width)
    cols = _interval_overlap_matrix(u_out, u_in)
    data = pano.data.astype(np.float64)
    out = np.einsum("Rh,hwc->Rwc", rows, data)
    out = np.einsum("Cw,Rwc->RCc", cols, out)
    return SkyPanorama(np.clip(out, 0.0, None).astype(np.float32))


def apply_mask(pano: SkyPanorama, mask: SkyMask) -> SkyPanorama:
    """Zero out occluded texels."""
    if (mask.height, mask.width) != (pano.height, pano.width):
        raise ValueError(
            f"mask {mask.height}x{mask.width} does not match panorama "
            f"{pano.height}x{pano.width}"
        )
    return SkyPanorama(np.where(mask.data[:, :, None], pano.data, 0.0).astype(np.float32))


def tone_map(pano_or_image, exposure: float = 1.0, display_gamma: float = 2.2) -> np.ndarray:
    """Map linear radiance to an 8-bit image: clamp(e*L, 0, 1)^(1/gamma) * 255."""
    if exposure <= 0:
        raise ValueError(f"exposure must be positive, got {exposure}")
    if display_gamma <= 0:
        raise ValueError(f"display gamma must be positive, got {display_gamma}")
    data = pano_or_image.data if isinstance(pano_or_image, SkyPanorama) else np.asarray(pano_or_image)
    v = np.clip(exposure * data.astype(np.float64), 0.0, 1.0) ** (1.0 / display_gamma)
    return np.rint(v * 255.0).astype(np.uint8)

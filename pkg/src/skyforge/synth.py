"""Procedural HDR sky generation: Perez all-weather gradation, an explicit
energy-conserving sun disc, random occluder masks, and dataset assembly.

The generator stands in for captured sky databases at desk scale and gives
exact ground truth for sun position, weather class, and sky coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import hdr_io
from .config import GeometryConfig, SynthConfig
from .pano import (
    SkyMask,
    SkyPanorama,
    SunPosition,
    integrate,
    solid_angle_map,
    texel_centers,
    texel_directions,
)

WEATHER_TAGS = ("clear", "partly", "overcast")


@dataclass(frozen=True)
class PerezParams:
    """Five-coefficient sky gradation plus zenith tint and sun-disc energy."""

    a: float
    b: float
    c: float
    d: float
    e: float
    zenith_radiance: tuple[float, float, float]
    sun: SunPosition
    sun_irradiance: tuple[float, float, float]
    weather_tag: str

    def __post_init__(self) -> None:
        if self.b >= 0:
            raise ValueError(f"horizon coefficient b must be negative, got {self.b}")
        if min(self.zenith_radiance) <= 0:
            raise ValueError("zenith radiance must be positive")
        if min(self.sun_irradiance) < 0:
            raise ValueError("sun irradiance must be non-negative")
        if self.weather_tag not in WEATHER_TAGS:
            raise ValueError(f"unknown weather tag {self.weather_tag!r}")

    def coefficients(self) -> tuple[float, float, float, float, float]:
        return (self.a, self.b, self.c, self.d, self.e)


def perez_gradation(
    theta: np.ndarray,
    gamma: np.ndarray,
    coeffs: tuple[float, float, float, float, float],
    cos_floor: float = 0.01,
) -> np.ndarray:
    """F(theta, gamma) = (1 + a exp(b / max(cos th, eps))) (1 + c exp(d g) + e cos^2 g)."""
    a, b, c, d, e = coeffs
    vertical = 1.0 + a * np.exp(b / np.maximum(np.cos(theta), cos_floor))
    circumsolar = 1.0 + c * np.exp(d * gamma) + e * np.cos(gamma) ** 2
    return vertical * circumsolar


def perez_sky(
    params: PerezParams,
    height: int = 32,
    width: int = 128,
    cos_floor: float = 0.01,
) -> SkyPanorama:
    """Render the smooth (sun-disc-free) Perez radiance distribution.

    Each texel gets ``zenith_radiance * F(theta, gamma) / F(0, theta_sun)``
    so the zenith direction normalizes to the zenith radiance exactly.
    """
    if params.sun.elevation < 0:
        raise ValueError("sun must be at or above the horizon")
    theta, _ = texel_centers(height, width)
    dirs = texel_directions(height, width)
    sun_dir = params.sun.direction()
    cos_gamma = np.clip(dirs @ sun_dir, -1.0, 1.0)
    gamma = np.arccos(cos_gamma)
    coeffs = params.coefficients()
    theta_sun = np.pi / 2 - params.sun.elevation
    ratio = perez_gradation(theta[:, None], gamma, coeffs, cos_floor) / perez_gradation(
        np.asarray(0.0), np.asarray(theta_sun), coeffs, cos_floor
    )
    tint = np.asarray(params.zenith_radiance, dtype=np.float64)
    return SkyPanorama((ratio[:, :, None] * tint[None, None, :]).astype(np.float32))


def add_sun_disc(
    pano: SkyPanorama,
    sun: SunPosition,
    sun_irradiance: tuple[float, float, float] | np.ndarray,
) -> SkyPanorama:
    """Deposit the sun's energy into the <=4 texels nearest its direction.

    The deposit is bilinear in (row, column) texel-center coordinates with
    out-of-range row weight folded into the boundary row, so the added
    integral equals ``sun_irradiance`` per channel exactly. At the working
    resolution the real 0.53 deg disc is far below one texel, so conserving
    energy is the meaningful contract rather than resolving the disc.
    """
    energy = np.asarray(sun_irradiance, dtype=np.float64)
    if energy.min() < 0:
        raise ValueError("sun irradiance must be non-negative")
    h, w = pano.height, pano.width
    theta_sun = np.pi / 2 - sun.elevation
    row_pos = theta_sun / (np.pi / 2) * h - 0.5
    col_pos = (sun.azimuth + np.pi) / (2 * np.pi) * w - 0.5
    r0 = int(np.floor(row_pos))
    c0 = int(np.floor(col_pos))
    wr1 = row_pos - r0
    wc1 = col_pos - c0
    dom = solid_angle_map(h, w)
    data = pano.data.astype(np.float64).copy()
    for r, wr in ((r0, 1.0 - wr1), (r0 + 1, wr1)):
        rc = min(max(r, 0), h - 1)  # fold zenith/horizon overshoot into the edge row
        for c, wc in ((c0, 1.0 - wc1), (c0 + 1, wc1)):
            weight = wr * wc
            if weight == 0.0:
                continue
            data[rc, c % w] += weight * energy / dom.row_values[rc]
    return SkyPanorama(data.astype(np.float32))


def _jittered(preset: tuple[float, ...], rng: np.random.Generator, jitter: float) -> np.ndarray:
    return np.asarray(preset) * rng.uniform(1 - jitter, 1 + jitter, size=len(preset))


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def sample_sky(
    rng_seed,
    geometry: GeometryConfig | None = None,
    config: SynthConfig | None = None,
) -> tuple[SkyPanorama, SkyMask, SunPosition, PerezParams]:
    """Draw one random sky: weather class, Perez coefficients, tint, sun disc.

    Pure function of the seed; the returned mask is all-sky (occlusion is a
    separate augmentation step).
    """
    geo = geometry or GeometryConfig()
    cfg = config or SynthConfig()
    rng = np.random.default_rng(rng_seed)

    weather = WEATHER_TAGS[rng.choice(len(WEATHER_TAGS), p=np.asarray(cfg.weather_probs))]
    lo, hi = np.deg2rad(cfg.elevation_range_deg)
    sun = SunPosition(
        azimuth=float(rng.uniform(-np.pi, np.pi)),
        elevation=float(rng.uniform(lo, hi)),
    )
    preset = {
        "clear": cfg.preset_clear,
        "partly": cfg.preset_partly,
        "overcast": cfg.preset_overcast,
    }[weather]
    a, b, c, d, e = (float(v) for v in _jittered(preset, rng, cfg.coefficient_jitter))

    zenith_lum = _log_uniform(rng, *cfg.zenith_luminance_range)
    if weather == "overcast":
        tint = np.ones(3)
    else:
        tint = np.asarray(cfg.clear_tint) * rng.uniform(
            1 - cfg.tint_jitter, 1 + cfg.tint_jitter, size=3
        )
        if weather == "partly":
            tint = 0.5 * tint + 0.5 * tint.mean()
    tint = tint / tint.mean()
    zenith = tuple(float(v) for v in (zenith_lum * tint))

    sun_color = np.asarray(cfg.neutral_sun_color, dtype=np.float64)
    warm_cut = np.deg2rad(cfg.warm_sun_below_deg)
    if sun.elevation < warm_cut:
        t = 1.0 - sun.elevation / warm_cut
        sun_color = (1 - t) * sun_color + t * np.asarray(cfg.warm_sun_color)
    sun_color = sun_color / sun_color.mean()

    params_no_sun = PerezParams(
        a=a, b=b, c=c, d=d, e=e,
        zenith_radiance=zenith,
        sun=sun,
        sun_irradiance=(0.0, 0.0, 0.0),
        weather_tag=weather,
    )
    sky = perez_sky(params_no_sun, geo.height, geo.width, cfg.horizon_cos_floor)
    sky_integral = integrate(sky)

    if weather == "overcast":
        # a fully hidden disc most of the time; otherwise a faint glow far
        # under the 5%-of-integral invariant
        if rng.random() < cfg.overcast_sunless_prob:
            frac = 0.0
        else:
            frac = rng.uniform(0.0, cfg.overcast_sun_fraction_max)
        energy = frac * sky_integral
    else:
        scalar = _log_uniform(rng, *cfg.clear_sun_irradiance_range)
        if weather == "partly":
            scalar *= rng.uniform(*cfg.partly_attenuation_range)
        energy = scalar * sun_color
    params = PerezParams(
        a=a, b=b, c=c, d=d, e=e,
        zenith_radiance=zenith,
        sun=sun,
        sun_irradiance=tuple(float(v) for v in energy),
        weather_tag=weather,
    )
    full = add_sun_disc(sky, sun, params.sun_irradiance)
    return full, SkyMask.all_sky(geo.height, geo.width), sun, params


def occluder_mask(
    rng_seed,
    height: int = 32,
    width: int = 128,
    config: SynthConfig | None = None,
) -> SkyMask:
    """Random skyline: 2-8 rectangles rising from the horizon plus 0-3
    elliptical blobs, rejection-sampled into the configured occluded-fraction
    band. The zenith band (top quarter of rows) always stays visible."""
    cfg = config or SynthConfig()
    rng = np.random.default_rng(rng_seed)
    protected = int(np.ceil(cfg.clear_zenith_band * height))
    lo, hi = cfg.occluded_fraction_range
    rows = np.arange(height)[:, None]
    cols_idx = np.arange(width)[None, :]
    for _ in range(1000):
        occluded = np.zeros((height, width), dtype=bool)
        n_rect = rng.integers(cfg.rectangles_range[0], cfg.rectangles_range[1] + 1)
        for _ in range(n_rect):
            rect_w = max(1, int(rng.uniform(0.03, 0.25) * width))
            rect_h = max(1, int(rng.uniform(0.1, 0.7) * (height - protected)))
            c_start = int(rng.integers(0, width))
            cols = (c_start + np.arange(rect_w)) % width
            occluded[height - rect_h :, cols] = True
        n_blob = rng.integers(cfg.blobs_range[0], cfg.blobs_range[1] + 1)
        for _ in range(n_blob):
            cy = rng.uniform(protected + 1, height)
            cx = rng.uniform(0, width)
            ry = rng.uniform(0.05, 0.2) * height
            rx = rng.uniform(0.05, 0.2) * width
            dx = (cols_idx - cx + width / 2) % width - width / 2  # azimuth wraps
            inside = (dx / rx) ** 2 + ((rows - cy) / ry) ** 2 <= 1.0
            occluded |= inside
        occluded[:protected, :] = False
        frac = occluded.mean()
        if lo <= frac <= hi:
            return SkyMask(~occluded)
    raise RuntimeError("could not sample an occluder mask within the fraction bounds")


def record_to_json(record: "SampleRecord") -> str:
    payload = {
        "id": record.id,
        "pano": record.pano,
        "mask": record.mask,
        "sun_azimuth_rad": record.sun.azimuth,
        "sun_elevation_rad": record.sun.elevation,
        "weather": record.perez.weather_tag,
        "perez": {k: getattr(record.perez, k) for k in "abcde"},
        "zenith_radiance": list(record.perez.zenith_radiance),
        "sun_irradiance": list(record.perez.sun_irradiance),
        "split": record.split,
    }
    return json.dumps(payload)


@dataclass(frozen=True)
class SampleRecord:
    """One manifest entry; paths are relative to the dataset root."""

    id: str
    pano: str
    mask: str
    sun: SunPosition
    perez: PerezParams
    split: str

    @classmethod
    def from_json(cls, line: str) -> "SampleRecord":
        obj = json.loads(line)
        sun = SunPosition(azimuth=obj["sun_azimuth_rad"], elevation=obj["sun_elevation_rad"])
        perez = PerezParams(
            a=obj["perez"]["a"], b=obj["perez"]["b"], c=obj["perez"]["c"],
            d=obj["perez"]["d"], e=obj["perez"]["e"],
            zenith_radiance=tuple(obj["zenith_radiance"]),
            sun=sun,
            sun_irradiance=tuple(obj["sun_irradiance"]),
            weather_tag=obj["weather"],
        )
        return cls(
            id=obj["id"], pano=obj["pano"], mask=obj["mask"],
            sun=sun, perez=perez, split=obj["split"],
        )

    def load_pano(self, root: str | Path) -> SkyPanorama:
        return SkyPanorama(hdr_io.read_pfm(hdr_io.read_file(Path(root) / self.pano)))

    def load_mask(self, root: str | Path) -> SkyMask:
        return SkyMask(hdr_io.read_pgm_mask(hdr_io.read_file(Path(root) / self.mask)))


def load_manifest(path: str | Path) -> list[SampleRecord]:
    lines = Path(path).read_text().splitlines()
    return [SampleRecord.from_json(line) for line in lines if line.strip()]


def generate_dataset(
    count: int,
    seed: int,
    out_dir: str | Path,
    splits: dict[str, float] | None = None,
    geometry: GeometryConfig | None = None,
    config: SynthConfig | None = None,
) -> list[SampleRecord]:
    """Write ``count`` seeded samples (PFM sky + PGM occluder mask) and a
    JSONL manifest. Byte-deterministic under (count, seed)."""
    geo = geometry or GeometryConfig()
    cfg = config or SynthConfig()
    splits = splits or {"train": 0.8, "val": 0.1, "test": 0.1}
    out = Path(out_dir)
    (out / "panos").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    names = list(splits)
    counts = [int(np.floor(splits[n] * count)) for n in names]
    counts[0] += count - sum(counts)
    boundaries = np.cumsum(counts)

    root_ss = np.random.SeedSequence(seed)
    children = root_ss.spawn(2 * count)
    records: list[SampleRecord] = []
    with open(out / "manifest.jsonl", "w") as manifest:
        for i in range(count):
            sky, _, sun, params = sample_sky(children[2 * i], geometry=geo, config=cfg)
            mask = occluder_mask(children[2 * i + 1], geo.height, geo.width, config=cfg)
            split = names[int(np.searchsorted(boundaries, i, side="right"))]
            sample_id = f"{i:05d}"
            pano_rel = f"panos/{sample_id}.pfm"
            mask_rel = f"masks/{sample_id}.pgm"
            hdr_io.write_file(out / pano_rel, hdr_io.write_pfm(sky.data))
            hdr_io.write_file(out / mask_rel, hdr_io.write_pgm_mask(mask.data))
            record = SampleRecord(
                id=sample_id, pano=pano_rel, mask=mask_rel,
                sun=sun, perez=params, split=split,
            )
            records.append(record)
            manifest.write(record_to_json(record) + "\n")
    return records

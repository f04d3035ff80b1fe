"""Radiometric distortion sampling/application and occlusion augmentation.

Distorted panoramas simulate uncalibrated captures: exposure scale, per-channel
white balance gain, and an inverse-gamma camera response, each drawn from a
bounded distribution. Bounds are enforced by resampling rather than clamping
so no probability mass piles up at the boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DistortionConfig
from .pano import SkyMask, SkyPanorama, apply_mask


@dataclass(frozen=True)
class DistortionParams:
    exposure: float
    white_balance: tuple[float, float, float]
    gamma: float

    def __post_init__(self) -> None:
        if not 0.1 <= self.exposure <= 10.0:
            raise ValueError(f"exposure {self.exposure} outside [0.1, 10]")
        if not all(0.8 <= w <= 1.2 for w in self.white_balance):
            raise ValueError(f"white balance {self.white_balance} outside [0.8, 1.2]")
        if not 0.85 <= self.gamma <= 1.2:
            raise ValueError(f"gamma {self.gamma} outside [0.85, 1.2]")

    @classmethod
    def identity(cls) -> "DistortionParams":
        return cls(exposure=1.0, white_balance=(1.0, 1.0, 1.0), gamma=1.0)


def _rejection_sample(rng: np.random.Generator, draw, lo: float, hi: float) -> float:
    for _ in range(10000):
        value = float(draw(rng))
        if lo <= value <= hi:
            return value
    raise RuntimeError("rejection sampling failed to land inside the bounds")


def sample_distortion(rng_seed, config: DistortionConfig | None = None) -> DistortionParams:
    """Draw distortion parameters; pure function of the seed."""
    cfg = config or DistortionConfig()
    rng = np.random.default_rng(rng_seed)
    exposure = _rejection_sample(
        rng,
        lambda r: np.exp(r.normal(cfg.exposure_mu, cfg.exposure_sigma)),
        *cfg.exposure_bounds,
    )
    wb = tuple(
        _rejection_sample(
            rng,
            lambda r: 1.0 + r.normal(0.0, cfg.white_balance_sigma),
            *cfg.white_balance_bounds,
        )
        for _ in range(3)
    )
    gamma = _rejection_sample(
        rng,
        lambda r: np.exp(r.normal(cfg.gamma_mu, cfg.gamma_sigma)),
        *cfg.gamma_bounds,
    )
    return DistortionParams(exposure=exposure, white_balance=wb, gamma=gamma)


def apply_distortion(pano: SkyPanorama, params: DistortionParams) -> SkyPanorama:
    """Apply exposure, then white balance, then the power-law response."""
    data = pano.data.astype(np.float64) * params.exposure
    data = data * np.asarray(params.white_balance)[None, None, :]
    data = data ** (1.0 / params.gamma)
    return SkyPanorama(data.astype(np.float32))


def maybe_occlude(
    pano: SkyPanorama,
    mask_bank: list[SkyMask],
    rng_seed,
    probability: float = 0.5,
) -> tuple[SkyPanorama, SkyMask, bool]:
    """With the given probability, black out the panorama with a random mask
    from the bank; otherwise return it untouched with an all-sky mask."""
    if not mask_bank:
        raise ValueError("mask bank is empty")
    rng = np.random.default_rng(rng_seed)
    if rng.random() >= probability:
        return pano, SkyMask.all_sky(pano.height, pano.width), False
    mask = mask_bank[int(rng.integers(0, len(mask_bank)))]
    return apply_mask(pano, mask), mask, True

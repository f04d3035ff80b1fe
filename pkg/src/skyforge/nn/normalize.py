"""Per-channel standardization of radiance data, by default in log space.

Linear-space statistics are dominated by sun texels (orders of magnitude above
the sky), which would let an L1 reconstruction ignore sky texture entirely;
standardizing ``ln(L + eps)`` keeps both regimes in range. A linear mode is
retained for ablation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import torch


@dataclass(frozen=True)
class Normalizer:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    space: str = "log"  # or "linear"
    log_eps: float = 1e-4
    std_clamped: bool = False  # set when a constant channel forced std to 1

    def _to_space(self, data: np.ndarray) -> np.ndarray:
        if self.space == "log":
            return np.log(data.astype(np.float64) + self.log_eps)
        return data.astype(np.float64)

    def apply(self, data: np.ndarray) -> np.ndarray:
        """Standardize an (..., 3) radiance array."""
        v = self._to_space(np.asarray(data))
        return ((v - np.asarray(self.mean)) / np.asarray(self.std)).astype(np.float32)

    def invert(self, normalized: np.ndarray) -> np.ndarray:
        v = np.asarray(normalized, dtype=np.float64) * np.asarray(self.std) + np.asarray(self.mean)
        if self.space == "log":
            v = np.exp(v) - self.log_eps
        return np.clip(v, 0.0, None).astype(np.float32)

    def apply_torch(self, data: torch.Tensor) -> torch.Tensor:
        """Standardize an (N, 3, H, W) tensor inside the autograd graph."""
        mean = torch.as_tensor(self.mean, dtype=data.dtype).view(1, 3, 1, 1)
        std = torch.as_tensor(self.std, dtype=data.dtype).view(1, 3, 1, 1)
        v = torch.log(data + self.log_eps) if self.space == "log" else data
        return (v - mean) / std

    def invert_torch(self, normalized: torch.Tensor, clamp: bool = True) -> torch.Tensor:
        mean = torch.as_tensor(self.mean, dtype=normalized.dtype).view(1, 3, 1, 1)
        std = torch.as_tensor(self.std, dtype=normalized.dtype).view(1, 3, 1, 1)
        v = normalized * std + mean
        if self.space == "log":
            v = torch.exp(v) - self.log_eps
        return torch.clamp(v, min=0.0) if clamp else v

    def to_dict(self) -> dict:
        return {
            "mean": list(self.mean), "std": list(self.std),
            "space": self.space, "log_eps": self.log_eps,
            "std_clamped": self.std_clamped,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Normalizer":
        return cls(
            mean=tuple(obj["mean"]), std=tuple(obj["std"]),
            space=obj["space"], log_eps=obj["log_eps"],
            std_clamped=obj.get("std_clamped", False),
        )

    @classmethod
    def identity(cls, space: str = "log", log_eps: float = 1e-4) -> "Normalizer":
        return cls(mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0), space=space, log_eps=log_eps)


def fit_normalizer(
    panoramas: Iterable[np.ndarray],
    space: str = "log",
    log_eps: float = 1e-4,
) -> Normalizer:
    """Accumulate per-channel mean/std over (..., 3) arrays.

    A degenerate (constant) channel gets its std clamped to 1 and the
    ``std_clamped`` flag set instead of producing a division blow-up.
    """
    total = np.zeros(3, dtype=np.float64)
    total_sq = np.zeros(3, dtype=np.float64)
    count = 0
    for arr in panoramas:
        v = np.asarray(arr, dtype=np.float64).reshape(-1, 3)
        if space == "log":
            v = np.log(v + log_eps)
        total += v.sum(axis=0)
        total_sq += (v * v).sum(axis=0)
        count += v.shape[0]
    if count == 0:
        raise ValueError("cannot fit a normalizer on an empty dataset")
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.sqrt(var)
    clamped = bool((std < 1e-12).any())
    std = np.where(std < 1e-12, 1.0, std)
    return Normalizer(
        mean=tuple(float(m) for m in mean),
        std=tuple(float(s) for s in std),
        space=space,
        log_eps=log_eps,
        std_clamped=clamped,
    )

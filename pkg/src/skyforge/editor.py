"""User-guided sky edits by latent projection.

An edit (move the sun up/down, change its intensity) is expressed as a target
panorama built by locally modifying the current decode around its brightest
texel. The latent code then follows the decoder gradient of the L1 distance
to that target, rebuilding the target from each new decode, so the result
stays on the decoder's manifold of plausible skies instead of containing the
hand-made artifact. Plain latent interpolation is kept as the documented
failure baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .config import EditConfig
from .pano import SkyPanorama, texel_centers
from .skymodel import SkyNetModel


@dataclass(frozen=True)
class EditRequest:
    kind: str  # "elevation" or "intensity"
    target: float  # radians for elevation; radiance value or factor for intensity
    intensity_mode: str = "absolute"  # or "multiplier"
    max_iterations: int = 300
    eta: float = 1e-2

    def __post_init__(self) -> None:
        if self.kind not in ("elevation", "intensity"):
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if self.kind == "elevation" and not (0.0 <= self.target <= np.pi / 2):
            raise ValueError(f"elevation target {self.target} outside [0, pi/2]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")


@dataclass
class TrajectoryPoint:
    iteration: int
    z: np.ndarray
    loss: float


@dataclass
class EditTrajectory:
    points: list[TrajectoryPoint] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def final_z(self) -> np.ndarray:
        return self.points[-1].z

    def losses(self) -> list[float]:
        return [p.loss for p in self.points]


def _window_indices(center: int, size: int, limit: int, wrap: bool) -> np.ndarray:
    half = size // 2
    idx = np.arange(center - half, center + half + 1)
    if wrap:
        return idx % limit
    return idx[(idx >= 0) & (idx < limit)]


def brightest_texel(sky: SkyPanorama) -> tuple[int, int]:
    lum = sky.luminance()
    r, c = np.unravel_index(int(np.argmax(lum)), lum.shape)
    return int(r), int(c)


def edit_target_with_region(
    decoded_sky: SkyPanorama, request: EditRequest, window: int = 5
) -> tuple[SkyPanorama, np.ndarray]:
    """Construct the edited panorama and the boolean region it touches.

    Elevation: the window around the brightest texel is cut, the vacated area
    filled with the median of the window's border ring, and the patch pasted
    at the row matching the target elevation (same column). Intensity: the
    window is rescaled so its maximum equals the target value. The region
    mask (source plus destination windows) lets the projection loss ignore
    texels the edit provably did not touch.
    """
    h, w = decoded_sky.height, decoded_sky.width
    r0, c0 = brightest_texel(decoded_sky)
    rows = _window_indices(r0, window, h, wrap=False)
    cols = _window_indices(c0, window, w, wrap=True)
    data = decoded_sky.data.astype(np.float64).copy()
    patch = data[np.ix_(rows, cols)].copy()
    region = np.zeros((h, w), dtype=bool)
    region[np.ix_(rows, cols)] = True

    if request.kind == "intensity":
        current_max = patch.max()
        target_value = (
            request.target
            if request.intensity_mode == "absolute"
            else request.target * current_max
        )
        if target_value < 0:
            raise ValueError("intensity target must be non-negative")
        scale = target_value / current_max if current_max > 0 else 0.0
        data[np.ix_(rows, cols)] = patch * scale
        return SkyPanorama(data.astype(np.float32)), region

    theta_target = np.pi / 2 - request.target
    r_target = int(np.clip(round(theta_target / (np.pi / 2) * h - 0.5), 0, h - 1))
    if r_target == r0:
        return SkyPanorama(data.astype(np.float32)), region

    ring_rows = _window_indices(r0, window + 2, h, wrap=False)
    ring_cols = _window_indices(c0, window + 2, w, wrap=True)
    ring = data[np.ix_(ring_rows, ring_cols)]
    inner = np.zeros(ring.shape[:2], dtype=bool)
    rr = np.isin(ring_rows, rows)
    cc = np.isin(ring_cols, cols)
    inner[np.ix_(rr, cc)] = True
    fill = np.median(ring[~inner].reshape(-1, 3), axis=0)

    data[np.ix_(rows, cols)] = fill
    dst_rows = rows - r0 + r_target
    valid = (dst_rows >= 0) & (dst_rows < h)
    data[np.ix_(dst_rows[valid], cols)] = patch[valid]
    region[np.ix_(dst_rows[valid], cols)] = True
    return SkyPanorama(data.astype(np.float32)), region


def build_edit_target(decoded_sky: SkyPanorama, request: EditRequest,
                      window: int = 5) -> SkyPanorama:
    return edit_target_with_region(decoded_sky, request, window)[0]


def project_edit(
    model: SkyNetModel,
    z0: np.ndarray,
    request: EditRequest,
    edit_cfg: EditConfig | None = None,
) -> EditTrajectory:
    """Gradient-project the latent toward the edit target.

    Each iteration decodes the current code, rebuilds the edit target from
    that decode, and takes a descent step on the normalized-space L1 distance.
    A step is accepted only if the recorded edit loss does not increase; on
    rejection the step size halves (a bounded number of times) before the
    projection stops. Accepted losses are therefore non-increasing by
    construction.
    """
    cfg = edit_cfg or EditConfig()
    window = cfg.window
    normalizer = model.normalizer
    z = torch.tensor(np.asarray(z0, dtype=np.float32)[None], requires_grad=True)

    def decode_norm(zt: torch.Tensor) -> torch.Tensor:
        return model.decoder.forward(zt)

    def target_for(zt: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, bool]:
        """Normalized target plus the edited-region mask; the loss is
        restricted to that region, where the target genuinely differs."""
        with torch.no_grad():
            out = decode_norm(zt)
        linear = SkyPanorama(normalizer.invert(out[0].numpy().transpose(1, 2, 0)))
        target, region = edit_target_with_region(linear, request, window=window)
        identical = bool(np.array_equal(target.data, linear.data))
        t_norm = torch.from_numpy(
            np.ascontiguousarray(normalizer.apply(target.data).transpose(2, 0, 1))[None]
        )
        mask = torch.from_numpy(region[None, None, :, :])
        return t_norm, mask, identical

    def loss_against(zt: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return ((decode_norm(zt) - target).abs() * mask).sum()

    target, mask, identical = target_for(z)
    with torch.no_grad():
        initial = float(loss_against(z, target, mask))
    trajectory = EditTrajectory()
    trajectory.points.append(TrajectoryPoint(0, z.detach()[0].numpy().copy(), initial))
    if identical or initial == 0.0:
        trajectory.stop_reason = "identity"
        return trajectory

    eta = float(request.eta)
    for iteration in range(1, request.max_iterations + 1):
        if iteration > 1:
            target, mask, _ = target_for(z)
        loss = loss_against(z, target, mask)
        (grad,) = torch.autograd.grad(loss, z)
        accepted = False
        step = eta
        for _ in range(cfg.max_step_halvings + 1):
            candidate = (z - step * grad).detach().requires_grad_(True)
            with torch.no_grad():
                cand_loss = float(loss_against(candidate, target, mask))
            if cand_loss <= trajectory.points[-1].loss:
                z = candidate
                eta = step  # shrunken steps persist as the new base
                trajectory.points.append(
                    TrajectoryPoint(iteration, z.detach()[0].numpy().copy(), cand_loss)
                )
                accepted = True
                break
            step /= 2.0
        if not accepted:
            trajectory.stop_reason = "step_exhausted"
            return trajectory
        prev, last = trajectory.points[-2].loss, trajectory.points[-1].loss
        if abs(prev - last) < cfg.convergence_rel_tol * max(prev, 1e-12):
            trajectory.stop_reason = "converged"
            return trajectory
    trajectory.stop_reason = "max_iterations"
    return trajectory


def interpolate_latent(z1: np.ndarray, z2: np.ndarray, t: float) -> np.ndarray:
    """Naive linear interpolation between codes: the baseline that motivates
    projection (midpoints of distant sunny skies can decode to multiple suns)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    z1 = np.asarray(z1, dtype=np.float32)
    z2 = np.asarray(z2, dtype=np.float32)
    return ((1.0 - t) * z1 + t * z2).astype(np.float32)


def elevation_of_brightest(sky: SkyPanorama) -> float:
    r, _ = brightest_texel(sky)
    theta, _ = texel_centers(sky.height, sky.width)
    return float(np.pi / 2 - theta[r])

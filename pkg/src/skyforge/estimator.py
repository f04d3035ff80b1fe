"""Single-image lighting estimation: crop production and the two encoders.

Crops are physically rendered views of synthetic scenes (ground plane plus a
few boxes) lit by generated skies, so every crop carries exact labels: the
sky's latent code and the sun azimuth relative to the camera. Two separate
networks consume a crop: image-to-sky regresses the latent code (optionally
anchored by a decoded-panorama loss through the frozen sky decoder), and
image-to-azimuth classifies the relative sun azimuth into 32 bins. Training
them jointly is deliberately avoided in favor of the two-model split.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import hdr_io
from .config import EstimatorConfig, RenderConfig
from .nn import (
    AdamState,
    Conv2d,
    Elu,
    FullyConnected,
    GlobalAveragePool,
    Network,
    ResidualBlock,
    adam_step,
    fit_normalizer,
    load_checkpoint,
    save_checkpoint,
)
from .nn.layers import spec_from_dict, spec_to_dict
from .nn.normalize import Normalizer
from .pano import (
    SkyPanorama,
    SunPosition,
    azimuth_to_column_shift,
    rotate_azimuth,
    solid_angle_map,
    texel_centers,
)
from .relight import Box, Camera, Scene, render_scene
from .skymodel import SkyNetModel


def wrap_angle(angle: float) -> float:
    """Wrap to [-pi, pi)."""
    return float((angle + np.pi) % (2 * np.pi) - np.pi)


def azimuth_to_bin(azimuth: float, bins: int = 32) -> int:
    j = int(np.floor((wrap_angle(azimuth) + np.pi) / (2 * np.pi) * bins))
    return min(max(j, 0), bins - 1)


def bin_center(j: int, bins: int = 32) -> float:
    return float(-np.pi + (j + 0.5) * 2 * np.pi / bins)


@dataclass
class CameraCrop:
    """A rendered limited-field-of-view view with its training labels."""

    image: np.ndarray  # (S, S, 3) linear radiance
    camera_azimuth: float
    fov_deg: float
    rel_sun_azimuth: float  # sun azimuth - camera azimuth, wrapped to [-pi, pi)
    z: np.ndarray | None
    source_id: str
    source_weight: float = 1.0


def _crop_scene(rng: np.random.Generator, camera_azimuth: float) -> Scene:
    forward = np.array([np.cos(camera_azimuth), np.sin(camera_azimuth), 0.0])
    right = np.array([np.sin(camera_azimuth), -np.cos(camera_azimuth), 0.0])
    boxes = []
    for _ in range(int(rng.integers(1, 4))):
        dist = rng.uniform(3.0, 12.0)
        lateral = rng.uniform(-6.0, 6.0)
        center = forward * dist + right * lateral
        sx, sy = rng.uniform(0.5, 3.0, size=2)
        height = rng.uniform(0.5, 3.0)
        boxes.append(
            Box(
                lo=(center[0] - sx / 2, center[1] - sy / 2, 0.0),
                hi=(center[0] + sx / 2, center[1] + sy / 2, height),
                albedo=float(rng.uniform(0.3, 0.8)),
            )
        )
    return Scene(plane_albedo=float(rng.uniform(0.3, 0.7)), boxes=tuple(boxes))


def render_crop(
    sky: SkyPanorama,
    sun: SunPosition,
    camera_azimuth: float,
    rng_seed,
    z_label: np.ndarray | None = None,
    fov_deg: float = 60.0,
    crop_size: int = 64,
    source_id: str = "",
    source_weight: float = 1.0,
    render_cfg: RenderConfig | None = None,
) -> CameraCrop:
    """Render one crop: horizontal-view pinhole camera over a ground plane
    with 1-3 random boxes, directly lit by the sky (split-sum shading)."""
    if not 0 < fov_deg < 180:
        raise ValueError(f"invalid field of view {fov_deg}")
    cfg = render_cfg or RenderConfig()
    rng = np.random.default_rng(rng_seed)
    scene = _crop_scene(rng, camera_azimuth)
    position = (0.0, 0.0, cfg.camera_height)
    look = (
        position[0] + np.cos(camera_azimuth),
        position[1] + np.sin(camera_azimuth),
        position[2],
    )
    camera = Camera(position=position, look_at=look, fov_v_deg=fov_deg, size=crop_size)
    image = render_scene(sky, scene, camera, mode="split", render_cfg=cfg)
    return CameraCrop(
        image=image,
        camera_azimuth=float(camera_azimuth),
        fov_deg=float(fov_deg),
        rel_sun_azimuth=wrap_angle(sun.azimuth - camera_azimuth),
        z=None if z_label is None else np.asarray(z_label, dtype=np.float32),
        source_id=source_id,
        source_weight=float(source_weight),
    )


def backbone_specs(out_dim: int, crop_size: int = 64) -> list:
    """Compact crop encoder; plain zero padding (crops are not periodic)."""
    return [
        Conv2d(3, 32, 5, stride=2, pad=2, pad_mode="zeros"), Elu(),
        Conv2d(32, 64, 3, stride=2, pad=1, pad_mode="zeros"), Elu(),
        ResidualBlock(64, pad_mode="zeros"),
        Conv2d(64, 128, 3, stride=2, pad=1, pad_mode="zeros"), Elu(),
        Conv2d(128, 128, 3, stride=2, pad=1, pad_mode="zeros"), Elu(),
        GlobalAveragePool(),
        FullyConnected(128, out_dim),
    ]


def estimator_backbone(seed: int, out_dim: int, crop_size: int = 64) -> Network:
    return Network(backbone_specs(out_dim, crop_size), (3, crop_size, crop_size), seed=seed)


@dataclass
class ImageToSkyModel:
    backbone: Network
    normalizer: Normalizer
    lambda_c: float
    config: EstimatorConfig
    history: list[dict] = field(default_factory=list)

    def predict(self, crop_image: np.ndarray) -> np.ndarray:
        x = self.normalizer.apply(crop_image)[None].transpose(0, 3, 1, 2)
        with torch.no_grad():
            z = self.backbone.forward(torch.from_numpy(np.ascontiguousarray(x)))
        return z[0].numpy().astype(np.float32)


@dataclass
class ImageToAzimuthModel:
    backbone: Network
    normalizer: Normalizer
    bins: int
    config: EstimatorConfig
    history: list[dict] = field(default_factory=list)

    def predict(self, crop_image: np.ndarray) -> np.ndarray:
        """32-bin probability distribution over the relative sun azimuth."""
        x = self.normalizer.apply(crop_image)[None].transpose(0, 3, 1, 2)
        with torch.no_grad():
            logits = self.backbone.forward(torch.from_numpy(np.ascontiguousarray(x)))
            probs = torch.softmax(logits[0], dim=0)
        return probs.numpy().astype(np.float64)


@dataclass
class EstimatorLossReport:
    l_z: float
    l_c: float
    l_i: float
    lambda_c: float


def sky_estimation_loss(
    z_hat: torch.Tensor,
    z: torch.Tensor,
    decoder: Network,
    normalizer: Normalizer,
    solid_angles: torch.Tensor,
    lambda_c: float,
    weights: torch.Tensor | None = None,
) -> tuple[torch.Tensor, EstimatorLossReport]:
    """L_i = L_z + lambda_c * L_c.

    L_z is the per-sample Euclidean norm of the code error; L_c compares the
    decoded panoramas in linear radiance, weighted by per-texel solid angle,
    with gradients flowing through the frozen decoder into the prediction
    only. ``weights`` rescales per-sample losses (data-source reweighting).
    """
    if z_hat.shape != z.shape:
        raise ValueError(f"latent shapes disagree: {tuple(z_hat.shape)} vs {tuple(z.shape)}")
    n = z_hat.shape[0]
    if weights is None:
        weights = torch.ones(n, dtype=z_hat.dtype)
    l_z_per = torch.linalg.vector_norm(z_hat - z.detach(), dim=1)
    if lambda_c != 0.0:
        dec_hat = normalizer.invert_torch(decoder.forward(z_hat))
        with torch.no_grad():
            dec_ref = normalizer.invert_torch(decoder.forward(z.detach()))
        diff = (dec_hat - dec_ref).abs() * solid_angles[None, None, :, :]
        l_c_per = diff.sum(dim=(1, 2, 3))
    else:
        l_c_per = torch.zeros_like(l_z_per)
    l_i = (weights * (l_z_per + lambda_c * l_c_per)).mean()
    report = EstimatorLossReport(
        l_z=l_z_per.mean().item(),
        l_c=l_c_per.mean().item(),
        l_i=l_i.item(),
        lambda_c=lambda_c,
    )
    return l_i, report


def azimuth_loss(logits: torch.Tensor, target_bins: torch.Tensor,
                 weights: torch.Tensor | None = None) -> torch.Tensor:
    """KL(one-hot || predicted) = -log p_target, from logits via log-softmax."""
    log_probs = torch.log_softmax(logits, dim=1)
    per = -log_probs[torch.arange(logits.shape[0]), target_bins]
    if weights is not None:
        per = per * weights
    return per.mean()


def _crop_batches(n: int, batch: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n - batch + 1, batch):
        yield order[start : start + batch]


def _stack_crops(crops: list[CameraCrop], normalizer: Normalizer) -> torch.Tensor:
    data = np.stack([normalizer.apply(c.image) for c in crops])
    return torch.from_numpy(np.ascontiguousarray(data.transpose(0, 3, 1, 2)))


def train_image_to_sky(
    crops: list[CameraCrop],
    sky_model: SkyNetModel,
    config: EstimatorConfig | None = None,
    seed: int = 0,
    deterministic: bool = False,
    log=None,
) -> ImageToSkyModel:
    """Two-phase schedule: code-only warmup at the higher rate, then the
    combined code + decoded-panorama loss at the low rate."""
    cfg = config or EstimatorConfig()
    if any(c.z is None for c in crops):
        raise ValueError("all crops need latent labels for image-to-sky training")
    if deterministic:
        torch.set_num_threads(1)
    normalizer = fit_normalizer([c.image for c in crops], space="log", log_eps=cfg.log_eps)
    backbone = estimator_backbone(seed, sky_model.latent_dim, cfg.crop_size)
    decoder = sky_model.decoder
    for p in decoder.parameters().values():
        p.requires_grad_(False)

    inputs = _stack_crops(crops, normalizer)
    z_labels = torch.from_numpy(np.stack([c.z for c in crops]).astype(np.float32))
    weights = torch.tensor([c.source_weight for c in crops], dtype=torch.float32)
    geo = sky_model.geometry
    dom = torch.from_numpy(
        solid_angle_map(geo.height, geo.width).grid().astype(np.float32)
    )

    params = backbone.parameters()
    state = AdamState(
        learning_rate=cfg.phase1_lr, betas=cfg.betas, weight_decay=cfg.weight_decay
    )
    n = len(crops)
    batch = min(cfg.batch_size, n)
    history: list[dict] = []

    lambda_c_value = 0.0
    total_epochs = cfg.phase1_epochs + cfg.phase2_epochs
    for epoch in range(total_epochs):
        t0 = time.perf_counter()
        phase2 = epoch >= cfg.phase1_epochs
        if phase2 and epoch == cfg.phase1_epochs:
            state.learning_rate = cfg.phase2_lr
            lambda_c_value = _resolve_lambda_c(
                cfg, backbone, decoder, sky_model.normalizer, inputs, z_labels, dom
            )
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3000 + epoch]))
        sums, steps = {"l_z": 0.0, "l_c": 0.0, "l_i": 0.0}, 0
        for idx in _crop_batches(n, batch, rng):
            z_hat = backbone.forward(inputs[idx])
            loss, report = sky_estimation_loss(
                z_hat, z_labels[idx], decoder, sky_model.normalizer, dom,
                lambda_c_value if phase2 else 0.0, weights[idx],
            )
            if not np.isfinite(report.l_i):
                raise RuntimeError(f"non-finite estimator loss at epoch {epoch}")
            grads = torch.autograd.grad(loss, list(params.values()))
            adam_step(state, params, dict(zip(params.keys(), grads)))
            sums["l_z"] += report.l_z
            sums["l_c"] += report.l_c
            sums["l_i"] += report.l_i
            steps += 1
        row = {
            "epoch": epoch,
            "phase": 2 if phase2 else 1,
            "lr": state.learning_rate,
            "lambda_c": lambda_c_value if phase2 else 0.0,
            "l_z": sums["l_z"] / max(steps, 1),
            "l_c": sums["l_c"] / max(steps, 1),
            "l_i": sums["l_i"] / max(steps, 1),
            "seconds": time.perf_counter() - t0,
        }
        history.append(row)
        if log:
            log(f"i2s epoch {epoch} (phase {row['phase']}): L_z {row['l_z']:.4f} "
                f"L_c {row['l_c']:.4g} ({row['seconds']:.1f}s)")
    return ImageToSkyModel(
        backbone=backbone, normalizer=normalizer,
        lambda_c=lambda_c_value, config=cfg,
        history=[{k: r[k] for k in r if k != "seconds"} for r in history],
    )


def _resolve_lambda_c(cfg, backbone, decoder, sky_normalizer, inputs, z_labels, dom) -> float:
    if isinstance(cfg.lambda_c, (int, float)):
        return float(cfg.lambda_c)
    probe = min(32, inputs.shape[0])
    with torch.no_grad():
        z_hat = backbone.forward(inputs[:probe])
        _, report = sky_estimation_loss(
            z_hat, z_labels[:probe], decoder, sky_normalizer, dom, 1.0
        )
    if report.l_c <= 0:
        return 0.0
    return 0.5 * report.l_z / report.l_c


def train_image_to_azimuth(
    crops: list[CameraCrop],
    config: EstimatorConfig | None = None,
    seed: int = 0,
    deterministic: bool = False,
    log=None,
) -> ImageToAzimuthModel:
    """Single-phase KL-divergence training of the azimuth-bin classifier."""
    cfg = config or EstimatorConfig()
    if deterministic:
        torch.set_num_threads(1)
    normalizer = fit_normalizer([c.image for c in crops], space="log", log_eps=cfg.log_eps)
    backbone = estimator_backbone(seed + 7, cfg.azimuth_bins, cfg.crop_size)
    inputs = _stack_crops(crops, normalizer)
    targets = torch.tensor(
        [azimuth_to_bin(c.rel_sun_azimuth, cfg.azimuth_bins) for c in crops],
        dtype=torch.long,
    )
    weights = torch.tensor([c.source_weight for c in crops], dtype=torch.float32)
    params = backbone.parameters()
    state = AdamState(
        learning_rate=cfg.azimuth_lr, betas=cfg.betas, weight_decay=cfg.weight_decay
    )
    n = len(crops)
    batch = min(cfg.batch_size, n)
    history: list[dict] = []
    for epoch in range(cfg.azimuth_epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 4000 + epoch]))
        total, steps = 0.0, 0
        for idx in _crop_batches(n, batch, rng):
            logits = backbone.forward(inputs[idx])
            loss = azimuth_loss(logits, targets[idx], weights[idx])
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite azimuth loss at epoch {epoch}")
            grads = torch.autograd.grad(loss, list(params.values()))
            adam_step(state, params, dict(zip(params.keys(), grads)))
            total += loss.item()
            steps += 1
        row = {"epoch": epoch, "loss": total / max(steps, 1),
               "seconds": time.perf_counter() - t0}
        history.append(row)
        if log:
            log(f"i2a epoch {epoch}: KL {row['loss']:.4f} ({row['seconds']:.1f}s)")
    return ImageToAzimuthModel(
        backbone=backbone, normalizer=normalizer, bins=cfg.azimuth_bins, config=cfg,
        history=[{k: r[k] for k in r if k != "seconds"} for r in history],
    )


@dataclass
class LightingEstimate:
    panorama: SkyPanorama          # rotated to the estimated azimuth
    sun: SunPosition               # azimuth relative to the camera
    azimuth_distribution: np.ndarray
    z: np.ndarray
    centered_panorama: SkyPanorama  # decoder output before rotation


def estimate_lighting(
    crop_image: np.ndarray,
    sky_model: SkyNetModel,
    image_to_sky: ImageToSkyModel,
    image_to_azimuth: ImageToAzimuthModel,
    azimuth_mode: str = "argmax",
) -> LightingEstimate:
    """Full estimation: predict the code, decode the sun-centered panorama,
    classify the relative azimuth, rotate the panorama into place, and read
    the elevation off the brightest reconstructed texel."""
    z_hat = image_to_sky.predict(crop_image)
    centered = sky_model.decode(z_hat)
    probs = image_to_azimuth.predict(crop_image)
    bins = len(probs)
    if azimuth_mode == "argmax":
        azimuth = bin_center(int(np.argmax(probs)), bins)
    elif azimuth_mode == "expectation":
        centers = np.array([bin_center(j, bins) for j in range(bins)])
        azimuth = float(np.arctan2((probs * np.sin(centers)).sum(),
                                   (probs * np.cos(centers)).sum()))
    else:
        raise ValueError(f"unknown azimuth mode {azimuth_mode!r}")
    rotated = rotate_azimuth(centered, azimuth_to_column_shift(azimuth, centered.width))
    lum = centered.luminance()
    r, _ = np.unravel_index(int(np.argmax(lum)), lum.shape)
    theta, _ = texel_centers(centered.height, centered.width)
    elevation = float(np.pi / 2 - theta[int(r)])
    return LightingEstimate(
        panorama=rotated,
        sun=SunPosition(azimuth=wrap_angle(azimuth), elevation=elevation),
        azimuth_distribution=probs,
        z=z_hat,
        centered_panorama=centered,
    )


def write_crops(out_dir: str | Path, crops: list[CameraCrop]) -> None:
    """PFM images plus a JSONL label file."""
    out = Path(out_dir)
    (out / "crops").mkdir(parents=True, exist_ok=True)
    with open(out / "labels.jsonl", "w") as fh:
        for i, crop in enumerate(crops):
            rel = f"crops/{i:05d}.pfm"
            hdr_io.write_file(out / rel, hdr_io.write_pfm(crop.image))
            fh.write(json.dumps({
                "crop": rel,
                "source_id": crop.source_id,
                "camera_azimuth_rad": crop.camera_azimuth,
                "rel_sun_azimuth_rad": crop.rel_sun_azimuth,
                "z": None if crop.z is None else [float(v) for v in crop.z],
                "source_weight": crop.source_weight,
            }) + "\n")


def read_crops(crop_dir: str | Path) -> list[CameraCrop]:
    root = Path(crop_dir)
    crops = []
    for line in (root / "labels.jsonl").read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        image = hdr_io.read_pfm(hdr_io.read_file(root / obj["crop"]))
        crops.append(CameraCrop(
            image=image,
            camera_azimuth=obj["camera_azimuth_rad"],
            fov_deg=60.0,
            rel_sun_azimuth=obj["rel_sun_azimuth_rad"],
            z=None if obj["z"] is None else np.asarray(obj["z"], dtype=np.float32),
            source_id=obj["source_id"],
            source_weight=obj.get("source_weight", 1.0),
        ))
    return crops


def save_estimator(
    path: str | Path,
    model: ImageToSkyModel | ImageToAzimuthModel,
    extra_header: dict | None = None,
) -> None:
    kind = "image_to_sky" if isinstance(model, ImageToSkyModel) else "image_to_azimuth"
    header = {
        "kind": kind,
        "specs": [spec_to_dict(s) for s in model.backbone.specs],
        "input_shape": list(model.backbone.input_shape),
        "normalizer": model.normalizer.to_dict(),
        "history": model.history,
        "config": _estimator_config_dict(model.config),
    }
    if extra_header:
        header.update(extra_header)
    if kind == "image_to_sky":
        header["lambda_c"] = model.lambda_c
    else:
        header["bins"] = model.bins
    save_checkpoint(path, header, model.backbone.export_parameters())


def load_estimator(path: str | Path):
    header, tensors = load_checkpoint(path)
    specs = [spec_from_dict(d) for d in header["specs"]]
    backbone = Network(specs, tuple(header["input_shape"]))
    backbone.load_parameters(tensors)
    cfg = EstimatorConfig(**header["config"])
    normalizer = Normalizer.from_dict(header["normalizer"])
    if header["kind"] == "image_to_sky":
        return ImageToSkyModel(
            backbone=backbone, normalizer=normalizer,
            lambda_c=header["lambda_c"], config=cfg, history=header.get("history", []),
        )
    if header["kind"] == "image_to_azimuth":
        return ImageToAzimuthModel(
            backbone=backbone, normalizer=normalizer,
            bins=header["bins"], config=cfg, history=header.get("history", []),
        )
    raise ValueError(f"checkpoint kind {header['kind']!r} is not an estimator")


def _estimator_config_dict(cfg: EstimatorConfig) -> dict:
    import dataclasses

    out = dataclasses.asdict(cfg)
    for key, value in out.items():
        if isinstance(value, tuple):
            out[key] = list(value)
    return out

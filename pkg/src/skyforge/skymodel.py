"""The sky autoencoder: a compact convolutional network that compresses a
32x128 HDR sky panorama into a 64-vector and reconstructs it.

Training enforces three robustness properties at once: the latent must be
stable under radiometric distortions (an L1 penalty between the codes of a
clean and a distorted copy), reconstructions of both copies must match the
clean panorama, and randomly occluded inputs must still reconstruct the full
unoccluded sky so the model learns to in-fill plausible energy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import augment
from .config import GeometryConfig, SkyModelConfig, SunDetectConfig
from .nn import (
    AdamState,
    Conv2d,
    Elu,
    Flatten,
    FullyConnected,
    NearestUpsample,
    Network,
    Reshape,
    ResidualBlock,
    adam_step,
    fit_normalizer,
    load_checkpoint,
    plateau_schedule,
    save_checkpoint,
)
from .nn.layers import LayerSpec, spec_from_dict, spec_to_dict
from .nn.normalize import Normalizer
from .pano import NoDistinctSun, SkyMask, SkyPanorama, center_sun, centering_shift, solid_angle_map
from .synth import SampleRecord


def skynet_specs(
    latent_dim: int = 64,
    base_channels: int = 32,
    height: int = 32,
    width: int = 128,
    stages: int = 4,
) -> tuple[list[LayerSpec], list[LayerSpec]]:
    """Encoder/decoder layer stacks; ``stages`` halvings of the resolution.

    The default (64-d latent, 32 base channels, 4 stages on 32x128) lands at
    roughly 1.1M parameters.
    """
    factor = 2 ** stages
    if height % factor or width % factor:
        raise ValueError(f"{height}x{width} not divisible by 2^{stages}")
    hb, wb = height // factor, width // factor
    c1, c2, c3 = base_channels, base_channels * 2, base_channels * 4
    if stages == 4:
        encoder = [
            Conv2d(3, c1, 7, stride=2, pad=3), Elu(),
            Conv2d(c1, c2, 5, stride=2, pad=2), Elu(),
            ResidualBlock(c2), ResidualBlock(c2),
            Conv2d(c2, c3, 3, stride=2, pad=1), Elu(),
            Conv2d(c3, c3, 3, stride=2, pad=1), Elu(),
            # near-zero code head: initial codes stay tiny, so the code
            # consistency term cannot collapse the encoder before
            # reconstruction shapes the latent space
            Flatten(), FullyConnected(c3 * hb * wb, latent_dim, init_scale=0.01),
        ]
        decoder = [
            FullyConnected(latent_dim, c3 * hb * wb), Reshape(c3, hb, wb),
            NearestUpsample(2), Conv2d(c3, c3, 3, stride=1, pad=1), Elu(),
            NearestUpsample(2), Conv2d(c3, c2, 3, stride=1, pad=1), Elu(),
            ResidualBlock(c2), ResidualBlock(c2),
            NearestUpsample(2), Conv2d(c2, c1, 3, stride=1, pad=1), Elu(),
            NearestUpsample(2), Conv2d(c1, 3, 3, stride=1, pad=1),
        ]
    elif stages == 2:
        encoder = [
            Conv2d(3, c1, 7, stride=2, pad=3), Elu(),
            Conv2d(c1, c2, 5, stride=2, pad=2), Elu(),
            ResidualBlock(c2), ResidualBlock(c2),
            Flatten(), FullyConnected(c2 * hb * wb, latent_dim, init_scale=0.01),
        ]
        decoder = [
            FullyConnected(latent_dim, c2 * hb * wb), Reshape(c2, hb, wb),
            ResidualBlock(c2), ResidualBlock(c2),
            NearestUpsample(2), Conv2d(c2, c1, 3, stride=1, pad=1), Elu(),
            NearestUpsample(2), Conv2d(c1, 3, 3, stride=1, pad=1),
        ]
    else:
        raise ValueError(f"unsupported stage count {stages}")
    return encoder, decoder


@dataclass
class SkyLossReport:
    l_r: float
    l_d: float
    l_s: float
    recon_clean: float
    recon_distorted: float


@dataclass
class SkyNetModel:
    encoder: Network
    decoder: Network
    normalizer: Normalizer
    config: SkyModelConfig
    geometry: GeometryConfig
    history: list[dict] = field(default_factory=list)
    mean_pano: np.ndarray | None = None
    seed: int = 0

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def parameter_count(self) -> int:
        return self.encoder.parameter_count() + self.decoder.parameter_count()

    def encode(self, pano: SkyPanorama, mask: SkyMask | None = None) -> np.ndarray:
        """Latent code of a (sun-centered) panorama; occluded texels zeroed."""
        data = pano.data
        if mask is not None:
            data = np.where(mask.data[:, :, None], data, 0.0).astype(np.float32)
        batch = self.normalizer.apply(data)[None].transpose(0, 3, 1, 2)
        with torch.no_grad():
            z = self.encoder.forward(torch.from_numpy(np.ascontiguousarray(batch)))
        return z[0].numpy().astype(np.float32)

    def decode(self, z: np.ndarray) -> SkyPanorama:
        """Linear-radiance panorama for a latent code (clamped at zero)."""
        z = np.asarray(z, dtype=np.float32)
        if z.shape != (self.latent_dim,):
            raise ValueError(f"latent must have shape ({self.latent_dim},), got {z.shape}")
        with torch.no_grad():
            out = self.decoder.forward(torch.from_numpy(z)[None])
        linear = self.normalizer.invert(out[0].numpy().transpose(1, 2, 0))
        return SkyPanorama(linear)

    def encode_batch(self, panos: np.ndarray) -> np.ndarray:
        """(N, H, W, 3) linear radiance -> (N, latent) codes."""
        batch = self.normalizer.apply(panos).transpose(0, 3, 1, 2)
        with torch.no_grad():
            z = self.encoder.forward(torch.from_numpy(np.ascontiguousarray(batch)))
        return z.numpy().astype(np.float32)

    def decode_batch(self, zs: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            out = self.decoder.forward(torch.from_numpy(np.asarray(zs, dtype=np.float32)))
        return self.normalizer.invert(out.numpy().transpose(0, 2, 3, 1))


def build_skynet(
    seed: int = 0,
    config: SkyModelConfig | None = None,
    geometry: GeometryConfig | None = None,
    stages: int = 4,
) -> SkyNetModel:
    """Assemble a fresh SkyNet and verify the parameter budget."""
    cfg = config or SkyModelConfig()
    geo = geometry or GeometryConfig()
    enc_specs, dec_specs = skynet_specs(
        cfg.latent_dim, cfg.base_channels, geo.height, geo.width, stages=stages
    )
    encoder = Network(enc_specs, (3, geo.height, geo.width), seed=seed)
    decoder = Network(dec_specs, (cfg.latent_dim,), seed=seed + 1)
    model = SkyNetModel(
        encoder=encoder,
        decoder=decoder,
        normalizer=Normalizer.identity(cfg.normalizer_space, cfg.log_eps),
        config=cfg,
        geometry=geo,
        seed=seed,
    )
    lo, hi = cfg.param_budget
    if lo and hi and not (lo <= model.parameter_count() <= hi):
        raise ValueError(
            f"parameter count {model.parameter_count()} outside budget [{lo:.0f}, {hi:.0f}]"
        )
    return model


def energy_share_weights(
    linear_targets: torch.Tensor, kappa: float, solid_angles: torch.Tensor
) -> torch.Tensor:
    """Per-texel loss weights ``1 + kappa * (texel energy share)``, normalized
    to mean 1 per sample.

    A texel's weight grows with its share of the panorama's total linear
    energy (radiance times solid angle), so the few sun texels that dominate
    every render carry a matching share of the reconstruction gradient, while
    smooth skies keep near-uniform weights and train like plain L1.
    """
    lum = linear_targets.mean(dim=1, keepdim=True)
    energy = lum * solid_angles[None, None, :, :]
    share = energy / energy.sum(dim=(2, 3), keepdim=True).clamp(min=1e-20)
    weights = 1.0 + kappa * share
    return weights / weights.mean(dim=(2, 3), keepdim=True)


def sky_loss(
    target_norm: torch.Tensor,
    loss_mask: torch.Tensor,
    recon_clean: torch.Tensor,
    recon_distorted: torch.Tensor,
    z: torch.Tensor,
    z_distorted: torch.Tensor,
    lambda_d: float = 100.0,
    loss_weights: torch.Tensor | None = None,
) -> tuple[torch.Tensor, SkyLossReport]:
    """Combined training loss, all terms in normalized log space.

    ``loss_mask`` implements the two occlusion regimes: pre-occluded samples
    restrict the reconstruction penalty to visible texels (the model is never
    penalized under unknown occluders), while randomly-masked samples keep the
    penalty everywhere so the network must in-fill the hidden sky.
    ``loss_weights`` optionally emphasizes texels (energy-share weighting);
    per sample, reconstruction terms are L1 sums over texels and the latent
    consistency term is the L1 norm of the code difference; both are averaged
    over the batch and combined as ``L_r + lambda_d * L_d``.
    """
    if target_norm.shape != recon_clean.shape or target_norm.shape != recon_distorted.shape:
        raise ValueError("target and reconstruction shapes disagree")
    if z.shape != z_distorted.shape:
        raise ValueError("latent shapes disagree")
    batch = target_norm.shape[0]
    mask = loss_mask if loss_weights is None else loss_mask * loss_weights
    clean = ((recon_clean - target_norm).abs() * mask).sum() / batch
    distorted = ((recon_distorted - target_norm).abs() * mask).sum() / batch
    l_r = clean + distorted
    l_d = (z_distorted - z).abs().sum() / batch
    l_s = l_r + lambda_d * l_d
    report = SkyLossReport(
        l_r=l_r.item(), l_d=l_d.item(), l_s=l_s.item(),
        recon_clean=clean.item(), recon_distorted=distorted.item(),
    )
    return l_s, report


@dataclass
class _PreparedDataset:
    panos: torch.Tensor        # (N, 3, H, W) linear radiance, sun-centered
    masks: torch.Tensor        # (N, 1, H, W) float; each sample's own occluders
    preoccluded: np.ndarray    # bool, True = treat as captured-with-occluders
    ids: list[str]


def prepare_training_set(
    records: list[SampleRecord],
    root: str | Path,
    preoccluded_every: int,
    sun_cfg: SunDetectConfig | None = None,
) -> _PreparedDataset:
    """Load, sun-center, and stack a manifest split.

    Panoramas with no distinct sun (overcast) pass through unrotated; each
    sample's occluder mask is rotated together with its panorama.
    """
    sun_cfg = sun_cfg or SunDetectConfig()
    panos, masks, ids = [], [], []
    preoccluded = np.zeros(len(records), dtype=bool)
    for i, rec in enumerate(records):
        pano = rec.load_pano(root)
        mask = rec.load_mask(root)
        try:
            centered, azimuth = center_sun(
                pano,
                percentile=sun_cfg.luminance_percentile,
                distinctness_ratio=sun_cfg.distinctness_ratio,
            )
            shift = centering_shift(azimuth, pano.width)
            mask_data = np.roll(mask.data, shift, axis=1)
            pano = centered
        except NoDistinctSun:
            mask_data = mask.data
        panos.append(pano.data.transpose(2, 0, 1))
        masks.append(mask_data[None].astype(np.float32))
        ids.append(rec.id)
        preoccluded[i] = (i % preoccluded_every) == (preoccluded_every - 1)
    return _PreparedDataset(
        panos=torch.from_numpy(np.ascontiguousarray(np.stack(panos))),
        masks=torch.from_numpy(np.ascontiguousarray(np.stack(masks))),
        preoccluded=preoccluded,
        ids=ids,
    )


def _batch_distort(
    panos: torch.Tensor, params: list[augment.DistortionParams]
) -> torch.Tensor:
    e = torch.tensor([p.exposure for p in params], dtype=panos.dtype).view(-1, 1, 1, 1)
    w = torch.tensor([p.white_balance for p in params], dtype=panos.dtype).view(-1, 3, 1, 1)
    g = torch.tensor([p.gamma for p in params], dtype=panos.dtype).view(-1, 1, 1, 1)
    return (panos * e * w) ** (1.0 / g)


def _assemble_batch(
    data: _PreparedDataset,
    idx: np.ndarray,
    distortions: list[augment.DistortionParams],
    occlude_roll: np.ndarray,
    bank_pick: np.ndarray,
    occlusion_prob: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Returns (clean inputs, distorted inputs, targets, loss mask), linear space."""
    panos = data.panos[idx]
    own_masks = data.masks[idx]
    pre = torch.from_numpy(data.preoccluded[idx])
    n = len(idx)

    inputs = panos.clone()
    loss_mask = torch.ones_like(own_masks)
    # pre-occluded style: occluders baked into both input and target, loss on sky only
    pre_idx = torch.nonzero(pre).flatten()
    inputs[pre_idx] = panos[pre_idx] * own_masks[pre_idx]
    loss_mask[pre_idx] = own_masks[pre_idx]
    targets = inputs.clone()
    # random-occlusion augmentation on the rest: input masked, target stays clean
    for j in range(n):
        if not pre[j] and occlude_roll[j] < occlusion_prob:
            inputs[j] = inputs[j] * data.masks[bank_pick[j]]
    distorted = _batch_distort(inputs, distortions)
    return inputs, distorted, targets, loss_mask


def train_skynet(
    train_records: list[SampleRecord],
    val_records: list[SampleRecord],
    dataset_root: str | Path,
    config: SkyModelConfig | None = None,
    geometry: GeometryConfig | None = None,
    sun_cfg: SunDetectConfig | None = None,
    distortion_cfg=None,
    seed: int = 0,
    deterministic: bool = False,
    log=None,
) -> tuple[SkyNetModel, list[dict]]:
    """Full training loop: distortion pairs, occlusion augmentation, Adam with
    the plateau schedule, best-validation checkpointing.

    Deterministic mode pins torch to a single thread so repeated runs are
    byte-identical.
    """
    if not train_records or not val_records:
        raise ValueError("training and validation manifests must be non-empty")
    cfg = config or SkyModelConfig()
    geo = geometry or GeometryConfig()
    if deterministic:
        torch.set_num_threads(1)

    train = prepare_training_set(train_records, dataset_root, cfg.preoccluded_every, sun_cfg)
    val = prepare_training_set(val_records, dataset_root, cfg.preoccluded_every, sun_cfg)

    model = build_skynet(seed=seed, config=cfg, geometry=geo)
    train_np = train.panos.numpy().transpose(0, 2, 3, 1)
    model.normalizer = fit_normalizer(
        [train_np], space=cfg.normalizer_space, log_eps=cfg.log_eps
    )
    model.mean_pano = train_np.mean(axis=0).astype(np.float32)

    params = {f"encoder.{k}": v for k, v in model.encoder.parameters().items()}
    params.update({f"decoder.{k}": v for k, v in model.decoder.parameters().items()})
    state = AdamState(
        learning_rate=cfg.learning_rate,
        betas=cfg.betas,
        weight_decay=cfg.weight_decay,
        plateau_patience=cfg.plateau_patience,
        plateau_factor=cfg.plateau_factor,
    )

    n = len(train.ids)
    batch = min(cfg.batch_size, n)
    normalizer = model.normalizer

    solid_angles = torch.from_numpy(
        np.repeat(
            solid_angle_map(geo.height, geo.width).row_values[:, None], geo.width, axis=1
        ).astype(np.float32)
    )

    def run_batch(data, idx, distortions, occ_roll, bank_pick):
        clean, distorted, targets, loss_mask = _assemble_batch(
            data, idx, distortions, occ_roll, bank_pick, cfg.occlusion_prob
        )
        x = normalizer.apply_torch(clean)
        x_d = normalizer.apply_torch(distorted)
        t = normalizer.apply_torch(targets)
        weights = None
        if cfg.energy_weight_kappa > 0:
            weights = energy_share_weights(targets, cfg.energy_weight_kappa, solid_angles)
        z = model.encoder.forward(x)
        z_d = model.encoder.forward(x_d)
        rec = model.decoder.forward(z)
        rec_d = model.decoder.forward(z_d)
        return sky_loss(t, loss_mask, rec, rec_d, z, z_d, cfg.lambda_d, weights)

    # fixed per-sample validation augmentation so epoch losses are comparable
    val_n = len(val.ids)
    val_dist = [
        augment.sample_distortion(np.random.SeedSequence([seed, 900_000 + j]), distortion_cfg)
        for j in range(val_n)
    ]
    val_rng = np.random.default_rng(np.random.SeedSequence([seed, 911]))
    val_roll = val_rng.random(val_n)
    val_bank = val_rng.integers(0, val_n, size=val_n)

    history: list[dict] = []
    best_val = np.inf
    best_params: dict[str, np.ndarray] | None = None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1000 + epoch]))
        order = rng.permutation(n)
        roll = rng.random(n)
        bank = rng.integers(0, n, size=n)
        sums = {"l_s": 0.0, "l_r": 0.0, "l_d": 0.0}
        steps = 0
        for start in range(0, n - batch + 1, batch):
            idx = order[start : start + batch]
            dist = [
                augment.sample_distortion(
                    np.random.SeedSequence([seed, epoch, int(j)]), distortion_cfg
                )
                for j in idx
            ]
            loss, report = run_batch(train, idx, dist, roll[idx], bank[idx])
            if not np.isfinite(report.l_s):
                bad = [train.ids[int(j)] for j in idx]
                raise RuntimeError(f"non-finite training loss at epoch {epoch}, samples {bad}")
            grads = torch.autograd.grad(loss, list(params.values()))
            adam_step(state, params, dict(zip(params.keys(), grads)))
            sums["l_s"] += report.l_s
            sums["l_r"] += report.l_r
            sums["l_d"] += report.l_d
            steps += 1

        with torch.no_grad():
            val_loss = 0.0
            vsteps = 0
            for start in range(0, val_n, batch):
                idx = np.arange(start, min(start + batch, val_n))
                _, vreport = run_batch(
                    val, idx, [val_dist[int(j)] for j in idx],
                    val_roll[idx], val_bank[idx],
                )
                val_loss += vreport.l_s * len(idx)
                vsteps += len(idx)
            val_loss /= max(vsteps, 1)

        lr = plateau_schedule(state, val_loss)
        row = {
            "epoch": epoch,
            "train_l_s": sums["l_s"] / max(steps, 1),
            "train_l_r": sums["l_r"] / max(steps, 1),
            "train_l_d": sums["l_d"] / max(steps, 1),
            "val_l_s": val_loss,
            "lr": lr,
            "seconds": time.perf_counter() - t0,
        }
        history.append(row)
        if log:
            log(
                f"epoch {epoch}: train L_s {row['train_l_s']:.4f} "
                f"val L_s {val_loss:.4f} lr {lr:g} ({row['seconds']:.1f}s)"
            )
        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.detach().numpy().copy() for k, v in params.items()}

    if best_params is not None:
        model.encoder.load_parameters(
            {k[len("encoder."):]: v for k, v in best_params.items() if k.startswith("encoder.")}
        )
        model.decoder.load_parameters(
            {k[len("decoder."):]: v for k, v in best_params.items() if k.startswith("decoder.")}
        )
    model.history = [
        {k: row[k] for k in ("epoch", "train_l_s", "train_l_r", "train_l_d", "val_l_s", "lr")}
        for row in history
    ]
    return model, history


def save_skynet(path: str | Path, model: SkyNetModel, extra_header: dict | None = None) -> None:
    header = {
        "kind": "skynet",
        "encoder_specs": [spec_to_dict(s) for s in model.encoder.specs],
        "decoder_specs": [spec_to_dict(s) for s in model.decoder.specs],
        "geometry": {"height": model.geometry.height, "width": model.geometry.width},
        "normalizer": model.normalizer.to_dict(),
        "config": _config_to_dict(model.config),
        "history": model.history,
        "seed": model.seed,
    }
    if extra_header:
        header.update(extra_header)
    tensors: dict[str, np.ndarray] = {}
    for k, v in model.encoder.export_parameters().items():
        tensors[f"encoder.{k}"] = v
    for k, v in model.decoder.export_parameters().items():
        tensors[f"decoder.{k}"] = v
    if model.mean_pano is not None:
        tensors["mean_pano"] = model.mean_pano
    save_checkpoint(path, header, tensors)


def load_skynet(path: str | Path) -> SkyNetModel:
    header, tensors = load_checkpoint(path)
    if header.get("kind") != "skynet":
        raise ValueError(f"checkpoint kind {header.get('kind')!r} is not a sky model")
    cfg = SkyModelConfig(**header["config"])
    geo = GeometryConfig(**header["geometry"])
    enc_specs = [spec_from_dict(d) for d in header["encoder_specs"]]
    dec_specs = [spec_from_dict(d) for d in header["decoder_specs"]]
    encoder = Network(enc_specs, (3, geo.height, geo.width), seed=header.get("seed", 0))
    decoder = Network(dec_specs, (cfg.latent_dim,), seed=header.get("seed", 0) + 1)
    encoder.load_parameters(
        {k[len("encoder."):]: v for k, v in tensors.items() if k.startswith("encoder.")}
    )
    decoder.load_parameters(
        {k[len("decoder."):]: v for k, v in tensors.items() if k.startswith("decoder.")}
    )
    model = SkyNetModel(
        encoder=encoder,
        decoder=decoder,
        normalizer=Normalizer.from_dict(header["normalizer"]),
        config=cfg,
        geometry=geo,
        history=header.get("history", []),
        mean_pano=tensors.get("mean_pano"),
        seed=header.get("seed", 0),
    )
    return model


def _config_to_dict(cfg: SkyModelConfig) -> dict:
    import dataclasses

    out = dataclasses.asdict(cfg)
    for key, value in out.items():
        if isinstance(value, tuple):
            out[key] = list(value)
    return out

"""Batch evaluation of the estimation pipeline against ground-truth skies.

For relighting metrics both the estimate and the ground truth are rotated so
their suns share one azimuth (the estimate's decode is sun-centered already;
the ground truth is centered the same way), isolating non-azimuth error.
Sun position error is computed separately without that alignment. A mean-sky
baseline (the training-mean panorama) is rendered once for normalization.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import EstimatorConfig, RenderConfig, SunDetectConfig
from .estimator import (
    CameraCrop,
    ImageToAzimuthModel,
    ImageToSkyModel,
    estimate_lighting,
)
from .pano import NoDistinctSun, SunPosition, center_sun
from .relight import cumulative_curve, render_ibl_batch, rmse, si_rmse, sun_angular_error
from .skymodel import SkyNetModel
from .synth import SampleRecord

_PCTS = {"p25": 25, "median": 50, "p75": 75, "p90": 90}


def render_crops_for_records(
    records: list[SampleRecord],
    dataset_root: str | Path,
    z_by_id: dict[str, np.ndarray] | None,
    per_sky: int,
    seed: int,
    config: EstimatorConfig | None = None,
    render_cfg: RenderConfig | None = None,
    log=None,
) -> list[CameraCrop]:
    """Render ``per_sky`` crops per source sky at evenly spaced, jittered
    camera azimuths; a small random subset of skies is tagged captured-style
    and upweighted."""
    from .estimator import render_crop  # local import keeps module load light

    cfg = config or EstimatorConfig()
    crops: list[CameraCrop] = []
    jitter = np.deg2rad(cfg.camera_jitter_deg)
    for i, rec in enumerate(records):
        sky = rec.load_pano(dataset_root)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 5000 + i]))
        weight = cfg.captured_weight if rng.random() < cfg.captured_fraction else 1.0
        z = None if z_by_id is None else z_by_id.get(rec.id)
        for j in range(per_sky):
            base = -np.pi + (j + 0.5) * 2 * np.pi / per_sky
            azimuth = float((base + rng.uniform(-jitter, jitter) + np.pi) % (2 * np.pi) - np.pi)
            crops.append(
                render_crop(
                    sky,
                    rec.sun,
                    camera_azimuth=azimuth,
                    rng_seed=np.random.SeedSequence([seed, 5000 + i, j]),
                    z_label=z,
                    fov_deg=cfg.fov_deg,
                    crop_size=cfg.crop_size,
                    source_id=rec.id,
                    source_weight=weight,
                    render_cfg=render_cfg,
                )
            )
        if log and (i + 1) % 100 == 0:
            log(f"rendered crops for {i + 1}/{len(records)} skies")
    return crops


@dataclass
class EvalReport:
    rows: list[dict]
    aggregates: dict[str, dict[str, float]] = field(default_factory=dict)
    baseline: dict[str, dict[str, float]] = field(default_factory=dict)
    curves: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    previews: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "aggregates": self.aggregates,
            "baseline": self.baseline,
            "per_sample": self.rows,
            "curves": {k: [[e, f] for e, f in v] for k, v in self.curves.items()},
            "info": self.info,
        }


def _aggregate(values: list[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    out = {name: float(np.percentile(arr, q)) for name, q in _PCTS.items()}
    out["mean"] = float(arr.mean())
    return out


def evaluate(
    crops: list[CameraCrop],
    sky_model: SkyNetModel,
    image_to_sky: ImageToSkyModel,
    image_to_azimuth: ImageToAzimuthModel,
    records_by_id: dict[str, SampleRecord],
    dataset_root: str | Path,
    render_cfg: RenderConfig | None = None,
    sun_cfg: SunDetectConfig | None = None,
    info: dict | None = None,
    preview_count: int = 4,
    log=None,
) -> EvalReport:
    render_cfg = render_cfg or RenderConfig()
    sun_cfg = sun_cfg or SunDetectConfig()
    if sky_model.mean_pano is None:
        raise ValueError("sky model lacks a training-mean panorama for the baseline")

    gt_centered_cache: dict[str, np.ndarray] = {}
    est_stack, gt_stack, rows = [], [], []
    sun_errors = []
    for crop in crops:
        rec = records_by_id[crop.source_id]
        if rec.id not in gt_centered_cache:
            gt = rec.load_pano(dataset_root)
            try:
                centered, _ = center_sun(
                    gt,
                    percentile=sun_cfg.luminance_percentile,
                    distinctness_ratio=sun_cfg.distinctness_ratio,
                )
            except NoDistinctSun:
                centered = gt
            gt_centered_cache[rec.id] = centered.data
        est = estimate_lighting(crop.image, sky_model, image_to_sky, image_to_azimuth)
        est_stack.append(est.centered_panorama.data)
        gt_stack.append(gt_centered_cache[rec.id])
        gt_sun = SunPosition(azimuth=crop.rel_sun_azimuth, elevation=rec.sun.elevation)
        err = sun_angular_error(est.sun, gt_sun)
        sun_errors.append(err)
        rows.append({
            "source_id": rec.id,
            "weather": rec.perez.weather_tag,
            "sun_error_deg": float(np.rad2deg(err)),
            "est_azimuth_rad": est.sun.azimuth,
            "gt_azimuth_rad": crop.rel_sun_azimuth,
            "est_elevation_rad": est.sun.elevation,
            "gt_elevation_rad": rec.sun.elevation,
        })
        if log and len(rows) % 100 == 0:
            log(f"estimated {len(rows)}/{len(crops)} crops")

    est_renders = render_ibl_batch(np.stack(est_stack), render_cfg=render_cfg)
    gt_renders = render_ibl_batch(np.stack(gt_stack), render_cfg=render_cfg)
    base_render = render_ibl_batch(sky_model.mean_pano[None], render_cfg=render_cfg)[0]

    base_rows = []
    for i, row in enumerate(rows):
        row["rmse"] = rmse(est_renders[i], gt_renders[i])
        row["si_rmse"] = si_rmse(est_renders[i], gt_renders[i])
        base_rows.append({
            "rmse": rmse(base_render, gt_renders[i]),
            "si_rmse": si_rmse(base_render, gt_renders[i]),
        })

    report = EvalReport(rows=rows, info=info or {})
    for metric in ("rmse", "si_rmse", "sun_error_deg"):
        report.aggregates[metric] = _aggregate([r[metric] for r in rows])
    for metric in ("rmse", "si_rmse"):
        report.baseline[metric] = _aggregate([r[metric] for r in base_rows])
    report.curves["si_rmse"] = cumulative_curve([r["si_rmse"] for r in rows])
    report.curves["sun_error_deg"] = cumulative_curve([r["sun_error_deg"] for r in rows])
    report.info.setdefault("render_config", {
        "image_size": render_cfg.image_size,
        "sphere_albedo": render_cfg.sphere_albedo,
        "plane_albedo": render_cfg.plane_albedo,
    })
    report.info.setdefault("num_samples", len(rows))
    report.previews = [
        {"estimate": est_renders[i], "ground_truth": gt_renders[i]}
        for i in range(min(preview_count, len(rows)))
    ]
    return report


def write_report(report: EvalReport, out_dir: str | Path) -> None:
    from . import hdr_io
    from .pano import tone_map

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    for name, curve in report.curves.items():
        with open(out / f"curve_{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["error", "fraction"])
            writer.writerows(curve)
    for i, pair in enumerate(report.previews):
        for kind, image in pair.items():
            hdr_io.write_file(out / f"preview_{i:02d}_{kind}.pfm", hdr_io.write_pfm(image))
            hdr_io.write_file(
                out / f"preview_{i:02d}_{kind}.ppm",
                hdr_io.write_ppm(tone_map(image, exposure=2.0)),
            )

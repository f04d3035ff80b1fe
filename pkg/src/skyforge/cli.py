"""Operator command-line interface wiring the pipeline stages together.

The three-step pipeline maps to three commands (train-sky, label,
train-estimator) with data generation, crop rendering, estimation, editing,
evaluation, and serving around them; each command is a thin orchestrator over
the library modules. Errors leave as machine-readable JSON on stderr with a
nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, hdr_io
from .config import RunConfig, load_config
from .pano import NoDistinctSun, SkyPanorama, center_sun, tone_map
from .synth import SampleRecord, generate_dataset, load_manifest

_DATA_DIR_ENV = "SKYFORGE_DATA_DIR"


def version_string() -> str:
    try:
        sha = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else __version__


def _provenance(cfg: RunConfig) -> dict:
    return {"version": version_string(), "config": cfg.to_dict()}


def _data_root(value: str | None) -> Path:
    if value:
        return Path(value)
    env = os.environ.get(_DATA_DIR_ENV)
    if env:
        return Path(env)
    raise FileNotFoundError(
        f"no dataset root given (pass --data or set {_DATA_DIR_ENV})"
    )


def _load_splits(manifest_root: Path) -> list[SampleRecord]:
    manifest = manifest_root / "manifest.jsonl"
    if not manifest.exists():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    return load_manifest(manifest)


def cmd_gen(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    generate_dataset(
        count=args.count, seed=cfg.seed, out_dir=out,
        splits={"train": args.train_frac, "val": args.val_frac, "test": args.test_frac},
        geometry=cfg.geometry, config=cfg.synth,
    )
    (out / "dataset_info.json").write_text(
        json.dumps({"count": args.count, **_provenance(cfg)}, indent=2, sort_keys=True)
    )
    print(f"wrote {args.count} samples to {out}")
    return 0


def cmd_train_sky(args, cfg: RunConfig) -> int:
    from .skymodel import save_skynet, train_skynet

    root = _data_root(args.data)
    records = _load_splits(root)
    train = [r for r in records if r.split == "train"]
    val = [r for r in records if r.split == "val"]
    model, history = train_skynet(
        train, val, root,
        config=cfg.sky_model, geometry=cfg.geometry, sun_cfg=cfg.sun,
        distortion_cfg=cfg.distortion, seed=cfg.seed,
        deterministic=cfg.deterministic, log=print,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_skynet(out, model, extra_header=_provenance(cfg))
    history_path = out.with_suffix(".history.jsonl")
    with open(history_path, "w") as fh:
        for row in history:
            fh.write(json.dumps(row) + "\n")
    print(f"saved sky model to {out} (history: {history_path})")
    return 0


def cmd_label(args, cfg: RunConfig) -> int:
    from .skymodel import load_skynet

    root = _data_root(args.data)
    records = _load_splits(root)
    model = load_skynet(args.sky_model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(out, "w") as fh:
        for rec in records:
            pano = rec.load_pano(root)
            try:
                centered, azimuth = center_sun(
                    pano, percentile=cfg.sun.luminance_percentile,
                    distinctness_ratio=cfg.sun.distinctness_ratio,
                )
                sun_centered = True
            except NoDistinctSun:
                centered, azimuth = pano, 0.0
                sun_centered = False
            z = model.encode(centered)
            fh.write(json.dumps({
                "id": rec.id,
                "z": [float(v) for v in z],
                "centered_azimuth_rad": float(azimuth),
                "sun_centered": sun_centered,
            }) + "\n")
            count += 1
    out.with_suffix(".info.json").write_text(
        json.dumps({"count": count, **_provenance(cfg)}, indent=2, sort_keys=True)
    )
    print(f"labeled {count} panoramas -> {out}")
    return 0


def read_labels(path: str | Path) -> dict[str, np.ndarray]:
    z_by_id: dict[str, np.ndarray] = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            obj = json.loads(line)
            z_by_id[obj["id"]] = np.asarray(obj["z"], dtype=np.float32)
    return z_by_id


def cmd_render_crops(args, cfg: RunConfig) -> int:
    from .estimator import write_crops
    from .evaluate import render_crops_for_records

    root = _data_root(args.data)
    records = _load_splits(root)
    if args.split:
        records = [r for r in records if r.split == args.split]
    if args.limit:
        records = records[: args.limit]
    z_by_id = read_labels(args.labels) if args.labels else None
    crops = render_crops_for_records(
        records, root, z_by_id,
        per_sky=args.per_sky or cfg.estimator.crops_per_sky,
        seed=cfg.seed, config=cfg.estimator, render_cfg=cfg.render, log=print,
    )
    out = Path(args.out)
    write_crops(out, crops)
    (out / "crops_info.json").write_text(
        json.dumps({"count": len(crops), **_provenance(cfg)}, indent=2, sort_keys=True)
    )
    print(f"wrote {len(crops)} crops to {out}")
    return 0


def cmd_train_estimator(args, cfg: RunConfig) -> int:
    from .estimator import read_crops, save_estimator, train_image_to_azimuth, train_image_to_sky
    from .skymodel import load_skynet

    crops = read_crops(args.crops)
    if args.kind == "sky":
        model = train_image_to_sky(
            crops, load_skynet(args.sky_model),
            config=cfg.estimator, seed=cfg.seed,
            deterministic=cfg.deterministic, log=print,
        )
    elif args.kind == "azimuth":
        model = train_image_to_azimuth(
            crops, config=cfg.estimator, seed=cfg.seed,
            deterministic=cfg.deterministic, log=print,
        )
    else:
        raise ValueError(f"unknown estimator kind {args.kind!r}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_estimator(out, model, extra_header=_provenance(cfg))
    print(f"saved {args.kind} estimator to {out}")
    return 0


def cmd_estimate(args, cfg: RunConfig) -> int:
    from .estimator import estimate_lighting, load_estimator
    from .skymodel import load_skynet

    crop = hdr_io.read_pfm(hdr_io.read_file(args.image))
    sky_model = load_skynet(args.sky_model)
    i2s = load_estimator(args.image_to_sky)
    i2a = load_estimator(args.image_to_azimuth)
    est = estimate_lighting(crop, sky_model, i2s, i2a, azimuth_mode=args.azimuth_mode)
    if args.out_pano:
        hdr_io.write_file(args.out_pano, hdr_io.write_pfm(est.panorama.data))
    payload = {
        "azimuth_rad": est.sun.azimuth,
        "elevation_rad": est.sun.elevation,
        "azimuth_bins": [float(p) for p in est.azimuth_distribution],
        "z": [float(v) for v in est.z],
        **_provenance(cfg),
    }
    if args.out_json:
        Path(args.out_json).write_text(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(json.dumps(payload))
    return 0


def cmd_edit(args, cfg: RunConfig) -> int:
    from .editor import EditRequest, project_edit
    from .skymodel import load_skynet

    model = load_skynet(args.sky_model)
    if args.z_json:
        z0 = np.asarray(json.loads(Path(args.z_json).read_text()), dtype=np.float32)
    elif args.pano:
        pano = SkyPanorama(hdr_io.read_pfm(hdr_io.read_file(args.pano)))
        centered, _ = center_sun(pano)
        z0 = model.encode(centered)
    else:
        raise ValueError("provide --z-json or --pano as the edit starting point")
    spec = json.loads(Path(args.edit_spec).read_text())
    request = EditRequest(
        kind=spec["kind"],
        target=float(spec["target"]),
        intensity_mode=spec.get("intensity_mode", "absolute"),
        max_iterations=int(spec.get("max_iterations", cfg.edit.max_iterations)),
        eta=float(spec.get("eta", cfg.edit.eta)),
    )
    trajectory = project_edit(model, z0, request, cfg.edit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trajectory.jsonl", "w") as fh:
        for point in trajectory.points:
            fh.write(json.dumps({
                "iteration": point.iteration,
                "loss": point.loss,
                "z": [float(v) for v in point.z],
            }) + "\n")
    final = model.decode(trajectory.final_z)
    hdr_io.write_file(out / "edited.pfm", hdr_io.write_pfm(final.data))
    if args.previews:
        hdr_io.write_file(
            out / "edited_preview.ppm",
            hdr_io.write_ppm(tone_map(final, exposure=args.preview_exposure)),
        )
    (out / "edit_info.json").write_text(json.dumps({
        "stop_reason": trajectory.stop_reason,
        "iterations": trajectory.points[-1].iteration,
        "final_loss": trajectory.points[-1].loss,
        **_provenance(cfg),
    }, indent=2, sort_keys=True))
    print(f"edit finished ({trajectory.stop_reason}) -> {out}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    from .estimator import load_estimator, read_crops
    from .evaluate import evaluate, write_report
    from .skymodel import load_skynet

    root = _data_root(args.data)
    records = {r.id: r for r in _load_splits(root)}
    crops = read_crops(args.crops)
    report = evaluate(
        crops,
        load_skynet(args.sky_model),
        load_estimator(args.image_to_sky),
        load_estimator(args.image_to_azimuth),
        records,
        root,
        render_cfg=cfg.render,
        sun_cfg=cfg.sun,
        info=_provenance(cfg),
        log=print,
    )
    write_report(report, args.out)
    agg = report.aggregates
    print(json.dumps({
        "median_sun_error_deg": agg["sun_error_deg"]["median"],
        "median_si_rmse": agg["si_rmse"]["median"],
        "baseline_median_si_rmse": report.baseline["si_rmse"]["median"],
    }))
    return 0


def cmd_serve(args, cfg: RunConfig) -> int:
    import uvicorn

    from .estimator import load_estimator
    from .service import create_app
    from .skymodel import load_skynet

    app = create_app(
        sky_model=load_skynet(args.sky_model),
        image_to_sky=load_estimator(args.image_to_sky) if args.image_to_sky else None,
        image_to_azimuth=load_estimator(args.image_to_azimuth) if args.image_to_azimuth else None,
        edit_cfg=cfg.edit,
        render_cfg=cfg.render,
        static_dir=args.static,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skyforge",
        description="HDR sky modeling, lighting estimation, and latent editing",
    )
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="YAML/JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="config override (dotted key)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("gen", help="generate a synthetic sky dataset")
    common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--test-frac", type=float, default=0.1)
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("train-sky", help="train the sky autoencoder")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train_sky)

    p = sub.add_parser("label", help="encode every dataset sky to its latent code")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--sky-model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_label)

    p = sub.add_parser("render-crops", help="render labeled camera crops")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--per-sky", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_render_crops)

    p = sub.add_parser("train-estimator", help="train an image encoder")
    common(p)
    p.add_argument("--kind", choices=["sky", "azimuth"], required=True)
    p.add_argument("--crops", required=True)
    p.add_argument("--sky-model", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train_estimator)

    p = sub.add_parser("estimate", help="estimate lighting from one crop image")
    common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--sky-model", required=True)
    p.add_argument("--image-to-sky", required=True)
    p.add_argument("--image-to-azimuth", required=True)
    p.add_argument("--azimuth-mode", choices=["argmax", "expectation"], default="argmax")
    p.add_argument("--out-pano", default=None)
    p.add_argument("--out-json", default=None)
    p.set_defaults(handler=cmd_estimate)

    p = sub.add_parser("edit", help="latent-project a sky edit")
    common(p)
    p.add_argument("--sky-model", required=True)
    p.add_argument("--z-json", default=None)
    p.add_argument("--pano", default=None)
    p.add_argument("--edit-spec", required=True,
                   help="JSON file {kind, target, max_iterations?, eta?}")
    p.add_argument("--out", required=True)
    p.add_argument("--previews", action="store_true")
    p.add_argument("--preview-exposure", type=float, default=1.0)
    p.set_defaults(handler=cmd_edit)

    p = sub.add_parser("eval", help="evaluate the full pipeline on test crops")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--crops", required=True)
    p.add_argument("--sky-model", required=True)
    p.add_argument("--image-to-sky", required=True)
    p.add_argument("--image-to-azimuth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP service")
    common(p)
    p.add_argument("--sky-model", required=True)
    p.add_argument("--image-to-sky", default=None)
    p.add_argument("--image-to-azimuth", default=None)
    p.add_argument("--static", default=None, help="directory of web editor assets")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7860)
    p.set_defaults(handler=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.deterministic:
            cfg.deterministic = True
        return args.handler(args, cfg)
    except Exception as exc:  # noqa: BLE001 - single CLI error boundary
        print(
            json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())

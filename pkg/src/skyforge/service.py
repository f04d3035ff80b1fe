"""HTTP service exposing encode/decode/estimate/edit/relight over JSON.

Binary images travel as base64-encoded PFM (linear) or PPM (preview) inside
JSON bodies, keeping the API single-content-type. Model snapshots are
immutable; sessions hold only a latent code and its edit history, with edits
serialized per session.
"""

from __future__ import annotations

import base64
import hashlib
import threading
import uuid
from dataclasses import dataclass, field
from time import time

import numpy as np
from fastapi import Body, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles

from . import hdr_io
from .config import EditConfig, RenderConfig, SunDetectConfig
from .editor import EditRequest, project_edit
from .estimator import ImageToAzimuthModel, ImageToSkyModel, estimate_lighting
from .pano import NoDistinctSun, SkyMask, SkyPanorama, detect_sun, tone_map
from .relight import render_ibl
from .skymodel import SkyNetModel

_MAX_PAYLOAD_BYTES = 8 * 1024 * 1024


@dataclass
class Session:
    z: np.ndarray
    model_version: str
    created: float = field(default_factory=time)
    history: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _b64_decode(value: str, what: str) -> bytes:
    if len(value) > _MAX_PAYLOAD_BYTES:
        raise HTTPException(400, f"{what} exceeds the 8 MiB payload bound")
    try:
        return base64.b64decode(value, validate=True)
    except Exception as exc:
        raise HTTPException(400, f"{what} is not valid base64: {exc}") from exc


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _parse_latent(payload: dict, dim: int) -> np.ndarray:
    z = payload.get("z")
    if not isinstance(z, list) or len(z) != dim:
        raise HTTPException(400, f"z must be a list of {dim} numbers")
    try:
        return np.asarray(z, dtype=np.float32)
    except (TypeError, ValueError) as exc:
        raise HTTPException(400, f"z is not numeric: {exc}") from exc


def _parse_pano(payload: dict, key: str) -> SkyPanorama:
    if key not in payload:
        raise HTTPException(400, f"missing field {key!r}")
    raw = _b64_decode(payload[key], key)
    try:
        return SkyPanorama(hdr_io.read_pfm(raw))
    except ValueError as exc:
        raise HTTPException(400, f"bad panorama: {exc}") from exc


def create_app(
    sky_model: SkyNetModel,
    image_to_sky: ImageToSkyModel | None = None,
    image_to_azimuth: ImageToAzimuthModel | None = None,
    edit_cfg: EditConfig | None = None,
    render_cfg: RenderConfig | None = None,
    sun_cfg: SunDetectConfig | None = None,
    static_dir: str | None = None,
) -> FastAPI:
    edit_cfg = edit_cfg or EditConfig()
    render_cfg = render_cfg or RenderConfig()
    sun_cfg = sun_cfg or SunDetectConfig()

    digest = hashlib.sha256()
    for name, arr in sky_model.encoder.export_parameters().items():
        digest.update(name.encode())
        digest.update(arr.tobytes())
    model_version = digest.hexdigest()[:12]

    sessions: dict[str, Session] = {}
    sessions_lock = threading.Lock()
    app = FastAPI(title="skyforge", version=model_version)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def sun_or_none(pano: SkyPanorama) -> dict | None:
        try:
            sun = detect_sun(
                pano,
                percentile=sun_cfg.luminance_percentile,
                distinctness_ratio=sun_cfg.distinctness_ratio,
            )
            return {"azimuth": sun.azimuth, "elevation": sun.elevation}
        except NoDistinctSun:
            return None

    def pano_payload(pano: SkyPanorama, exposure: float = 1.0) -> dict:
        return {
            "pano_pfm_b64": _b64(hdr_io.write_pfm(pano.data)),
            "preview_ppm_b64": _b64(hdr_io.write_ppm(tone_map(pano, exposure=exposure))),
            "sun": sun_or_none(pano),
            "model_version": model_version,
        }

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "model_versions": {
                "sky_model": model_version,
                "image_to_sky": image_to_sky is not None,
                "image_to_azimuth": image_to_azimuth is not None,
            },
        }

    @app.post("/decode")
    def decode(payload: dict = Body(...)):
        z = _parse_latent(payload, sky_model.latent_dim)
        pano = sky_model.decode(z)
        return pano_payload(pano, float(payload.get("exposure", 1.0)))

    @app.post("/encode")
    def encode(payload: dict = Body(...)):
        pano = _parse_pano(payload, "pano_pfm_b64")
        mask = None
        if payload.get("mask_pgm_b64"):
            try:
                mask = SkyMask(hdr_io.read_pgm_mask(_b64_decode(payload["mask_pgm_b64"], "mask")))
            except ValueError as exc:
                raise HTTPException(400, f"bad mask: {exc}") from exc
        z = sky_model.encode(pano, mask)
        return {"z": [float(v) for v in z], "model_version": model_version}

    @app.post("/estimate")
    def estimate(payload: dict = Body(...)):
        if image_to_sky is None or image_to_azimuth is None:
            raise HTTPException(400, "estimator models are not loaded on this server")
        if "image_pfm_b64" not in payload:
            raise HTTPException(400, "missing field 'image_pfm_b64'")
        raw = _b64_decode(payload["image_pfm_b64"], "image_pfm_b64")
        try:
            image = hdr_io.read_pfm(raw)
        except ValueError as exc:
            raise HTTPException(400, f"bad image: {exc}") from exc
        est = estimate_lighting(image, sky_model, image_to_sky, image_to_azimuth)
        return {
            "z": [float(v) for v in est.z],
            "azimuth_bins": [float(p) for p in est.azimuth_distribution],
            "azimuth_rad": est.sun.azimuth,
            "elevation_rad": est.sun.elevation,
            **pano_payload(est.panorama, float(payload.get("exposure", 1.0))),
        }

    @app.post("/session")
    def create_session(payload: dict = Body(default={})):
        if "z" in payload:
            z = _parse_latent(payload, sky_model.latent_dim)
        elif "pano_pfm_b64" in payload:
            pano = _parse_pano(payload, "pano_pfm_b64")
            z = sky_model.encode(pano)
        else:
            raise HTTPException(400, "provide either 'z' or 'pano_pfm_b64'")
        session = Session(z=z, model_version=model_version)
        session_id = uuid.uuid4().hex
        with sessions_lock:
            sessions[session_id] = session
        pano = sky_model.decode(z)
        return {
            "session_id": session_id,
            "z": [float(v) for v in z],
            **pano_payload(pano, float(payload.get("exposure", 1.0))),
        }

    @app.post("/session/{session_id}/edit")
    def session_edit(session_id: str, payload: dict = Body(...)):
        with sessions_lock:
            session = sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id}")
        if session.model_version != model_version:
            raise HTTPException(409, "session was created under a different model snapshot")
        kind = payload.get("kind")
        if kind not in ("elevation", "intensity"):
            raise HTTPException(400, "kind must be 'elevation' or 'intensity'")
        if "target" not in payload:
            raise HTTPException(400, "missing field 'target'")
        max_iterations = min(int(payload.get("max_iterations", edit_cfg.max_iterations)), 300)
        try:
            request = EditRequest(
                kind=kind,
                target=float(payload["target"]),
                intensity_mode=payload.get("intensity_mode", "absolute"),
                max_iterations=max_iterations,
                eta=float(payload.get("eta", edit_cfg.eta)),
            )
        except ValueError as exc:
            raise HTTPException(400, str(exc)) from exc
        with session.lock:
            if kind == "elevation":
                decoded = sky_model.decode(session.z)
                if sun_or_none(decoded) is None:
                    raise HTTPException(
                        422, "no distinct sun in the current sky; elevation edits need one"
                    )
            trajectory = project_edit(sky_model, session.z, request, edit_cfg)
            session.z = trajectory.final_z.copy()
            session.history.append({
                "kind": kind,
                "target": float(payload["target"]),
                "iterations": trajectory.points[-1].iteration,
                "stop_reason": trajectory.stop_reason,
                "final_loss": trajectory.points[-1].loss,
            })
            z = session.z.copy()
        pano = sky_model.decode(z)
        exposure = float(payload.get("exposure", 1.0))
        relit = render_ibl(pano, render_cfg=render_cfg)
        return {
            "z": [float(v) for v in z],
            "loss_curve": [p.loss for p in trajectory.points],
            "stop_reason": trajectory.stop_reason,
            "relit_preview_ppm_b64": _b64(
                hdr_io.write_ppm(tone_map(relit, exposure=exposure))
            ),
            **pano_payload(pano, exposure),
        }

    @app.post("/relight")
    def relight(payload: dict = Body(...)):
        preset = payload.get("preset", "sphere_plane")
        if preset != "sphere_plane":
            raise HTTPException(400, f"unknown preset {preset!r}")
        if "z" in payload:
            pano = sky_model.decode(_parse_latent(payload, sky_model.latent_dim))
        else:
            pano = _parse_pano(payload, "pano_pfm_b64")
        image = render_ibl(pano, preset=preset, render_cfg=render_cfg)
        exposure = float(payload.get("exposure", 1.0))
        return {
            "image_ppm_b64": _b64(hdr_io.write_ppm(tone_map(image, exposure=exposure))),
            "model_version": model_version,
        }

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="editor")
    return app

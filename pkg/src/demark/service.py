"""HTTP inference endpoint backing the mask-drawing UI.

JSON over HTTP, images as base64 PNG. The mask arrives either as a base64
single-channel PNG (binarized at 0.5), as a list of polygons rasterized
server-side with the even-odd rule, or is synthesized all-ones when
`options.blind` is set. Inference runs on a frozen checkpoint; identical
request payloads produce identical restored-image bytes.
"""

from __future__ import annotations

import threading
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field
from scipy import ndimage

from .errors import CheckpointError, InputError
from .geometry import rasterize_polygons
from .images import decode_b64, encode_b64
from .model import load_model_dir, restore_image

DEFAULT_SIZE_LIMIT = 16 * 1024 * 1024  # bytes of decoded payload
MAX_DILATE_RADIUS = 64


class RemoveOptions(BaseModel):
    return_cbkg: bool = False
    blind: bool = False
    dilate_radius: int = 0


class RemoveRequest(BaseModel):
    image: str
    mask: str | None = None
    polygons: list[list[tuple[float, float]]] | None = None
    options: RemoveOptions = Field(default_factory=RemoveOptions)


class RemoveResponse(BaseModel):
    image: str
    cbkg: str | None = None
    timing_ms: float
    model_id: str


def _disc(radius: int) -> np.ndarray:
    yy, xx = np.ogrid[-radius : radius + 1, -radius : radius + 1]
    return (yy * yy + xx * xx) <= radius * radius


def resolve_mask(req: RemoveRequest, h: int, w: int) -> np.ndarray:
    if req.options.blind:
        return np.ones((h, w, 1), dtype=np.float32)
    if req.mask is not None:
        mask = decode_b64(req.mask, channels=1)
        if mask.shape[:2] != (h, w):
            raise InputError(
                f"mask {mask.shape[:2]} does not match image {(h, w)}"
            )
        mask = (mask >= 0.5).astype(np.float32)
    elif req.polygons is not None:
        mask = rasterize_polygons(req.polygons, h, w).astype(np.float32)[:, :, None]
    else:
        raise InputError("request needs a mask, polygons, or options.blind")
    radius = req.options.dilate_radius
    if radius < 0 or radius > MAX_DILATE_RADIUS:
        raise InputError(f"dilate_radius outside [0, {MAX_DILATE_RADIUS}]")
    if radius:
        grown = ndimage.binary_dilation(mask[:, :, 0] > 0, structure=_disc(radius))
        mask = grown.astype(np.float32)[:, :, None]
    return mask


def create_app(
    checkpoint_dir: str | Path | None = None,
    model=None,
    model_id: str = "",
    size_limit: int = DEFAULT_SIZE_LIMIT,
    max_workers: int = 2,
) -> FastAPI:
    app = FastAPI(title="demark inference service", version="v1")
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(  # the mask editor runs on a different origin
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    started = time.monotonic()
    gate = threading.Semaphore(max_workers)

    card = {}
    if checkpoint_dir is not None:
        try:
            model, card = load_model_dir(checkpoint_dir)
        except (CheckpointError, InputError, OSError) as exc:
            app.state.load_error = str(exc)
            model = None
    if model is not None:
        model.eval()
        model_id = model_id or f"{card.get('config_hash', model.config.config_hash())}-step{card.get('step', 0)}"
    app.state.model = model
    app.state.model_id = model_id
    app.state.config_hash = card.get("config_hash", "") or (
        model.config.config_hash() if model is not None else ""
    )

    b64_limit = size_limit * 4 // 3 + 8

    @app.get("/v1/health")
    def health():
        return {
            "status": "ready" if app.state.model is not None else "degraded",
            "model_id": app.state.model_id,
            "config_hash": app.state.config_hash,
            "uptime_s": round(time.monotonic() - started, 3),
        }

    @app.post("/v1/remove", response_model=RemoveResponse, response_model_exclude_none=True)
    def remove(req: RemoveRequest):
        if app.state.model is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        payload_chars = len(req.image) + len(req.mask or "")
        if payload_chars > b64_limit:
            raise HTTPException(status_code=413, detail="payload exceeds size limit")
        t0 = time.monotonic()
        try:
            image = decode_b64(req.image, channels=3)
            mask = resolve_mask(req, *image.shape[:2])
            with gate:
                out, cbkg = restore_image(
                    app.state.model, image, mask, want_cbkg=req.options.return_cbkg
                )
        except InputError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return RemoveResponse(
            image=encode_b64(out),
            cbkg=encode_b64(cbkg) if (req.options.return_cbkg and cbkg is not None) else None,
            timing_ms=round(1000 * (time.monotonic() - t0), 3),
            model_id=app.state.model_id,
        )

    return app

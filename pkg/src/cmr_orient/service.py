"""HTTP service backing the browser UI.

Endpoints (JSON except slice images and file downloads):

    POST /volumes                      upload (raw body, octet-stream)
    GET  /volumes/{id}/slices/{k}      rendered 8-bit PNG of slice k
    GET  /volumes/{id}/prediction      per-slice codes + consensus
    POST /volumes/{id}/adjust {code}   apply the correction, new prediction
    POST /volumes/{id}/save            download the current file bytes

The working directory holds the uploaded volumes; nothing else persists
across restarts.  Per-volume operations serialize on a per-id lock while
the model is shared read-only.
"""

from __future__ import annotations

import io
import threading
import uuid
from dataclasses import asdict
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import FileResponse, Response
from fastapi.staticfiles import StaticFiles

from .standardize import Recognizer, correct, recognize
from .volume import VolumeError, read_volume, write_volume

__all__ = ["create_app"]

DEFAULT_MAX_UPLOAD = 256 * 1024 * 1024


def _render_slice(sl: np.ndarray, g: float) -> bytes:
    from PIL import Image

    lo = 0.0
    hi = g if g > 0 else 1.0
    arr = np.clip((np.asarray(sl, dtype=np.float64) - lo) / (hi - lo), 0, 1)
    img = Image.fromarray((arr * 255).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def create_app(recognizer: Recognizer, workdir, max_upload: int = DEFAULT_MAX_UPLOAD,
               ui_dir=None) -> FastAPI:
    app = FastAPI(title="CMR orientation service")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    volumes: dict[str, Path] = {}
    locks: dict[str, threading.Lock] = {}
    registry_lock = threading.Lock()

    def _lookup(vol_id: str) -> tuple[Path, threading.Lock]:
        with registry_lock:
            if vol_id not in volumes:
                raise HTTPException(status_code=404, detail="unknown volume id")
            return volumes[vol_id], locks[vol_id]

    @app.post("/volumes")
    async def upload(request: Request):
        body = await request.body()
        if len(body) > max_upload:
            raise HTTPException(status_code=413, detail="upload too large")
        if not body:
            raise HTTPException(status_code=400, detail="empty upload")
        vol_id = uuid.uuid4().hex[:12]
        suffix = ".nii.gz" if body[:2] == b"\x1f\x8b" else ".nii"
        path = workdir / f"{vol_id}{suffix}"
        path.write_bytes(body)
        try:
            vol = read_volume(path)
        except VolumeError as e:
            path.unlink(missing_ok=True)
            raise HTTPException(status_code=400, detail=str(e))
        with registry_lock:
            volumes[vol_id] = path
            locks[vol_id] = threading.Lock()
        return {
            "id": vol_id,
            "n_slices": vol.n_slices,
            "shape": list(vol.voxels.shape),
            "max_gray": vol.max_gray,
        }

    @app.get("/volumes/{vol_id}/slices/{k}")
    def get_slice(vol_id: str, k: int):
        path, lock = _lookup(vol_id)
        with lock:
            vol = read_volume(path)
            if not 0 <= k < vol.n_slices:
                raise HTTPException(status_code=404, detail="slice index out of range")
            sl = vol.voxels if vol.voxels.ndim == 2 else vol.voxels[:, :, k]
            png = _render_slice(sl, vol.max_gray)
        return Response(content=png, media_type="image/png")

    def _prediction_payload(vol):
        slices, code, conf, unanimous = recognize(vol, recognizer)
        return {
            "slices": [asdict(s) for s in slices],
            "consensus": str(code),
            "confidence": conf,
            "unanimous": unanimous,
        }

    @app.get("/volumes/{vol_id}/prediction")
    def prediction(vol_id: str):
        path, lock = _lookup(vol_id)
        with lock:
            return _prediction_payload(read_volume(path))

    @app.post("/volumes/{vol_id}/adjust")
    async def adjust(vol_id: str, request: Request):
        payload = await request.json()
        code = payload.get("code") if isinstance(payload, dict) else None
        try:
            from .orient import as_code

            c = as_code(code)
        except (ValueError, TypeError):
            raise HTTPException(status_code=400, detail=f"invalid code {code!r}")
        path, lock = _lookup(vol_id)
        with lock:
            vol = read_volume(path)
            if c.bits != 0:
                vol = correct(vol, c)
                write_volume(vol, path)
            return _prediction_payload(vol)

    @app.post("/volumes/{vol_id}/save")
    def save(vol_id: str):
        path, lock = _lookup(vol_id)
        with lock:
            media = "application/gzip" if path.name.endswith(".gz") else "application/octet-stream"
            return FileResponse(path, media_type=media, filename=path.name)

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app

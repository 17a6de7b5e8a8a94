"""Local request/response service for interactive viewers.

Protocol:
  GET  /cases   -> {"cases": [CaseDescriptor...], "warnings": [...]}
  POST /render  -> binary frame (raw RGBA8 with X-Width/X-Height headers,
                   or PNG when the client accepts image/png)
  GET  /healthz -> "ok"

Rendering is stateless; assets are decoded once and cached immutably, so
concurrent requests for different cases never block on each other.
"""

from __future__ import annotations

import threading
import time
from pathlib import Path
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field, field_validator

from .codec import load_asset
from .compiler import LayeredAsset
from .core import CameraPose, SlicingPlane
from .errors import SplatsliceError
from .renderer import RenderMode, render, select_state

MAX_PIXELS = 2_073_600  # service-side viewport cap (1920x1080)
ASSET_SUFFIX = ".cgsa"


class PlaneSpec(BaseModel):
    normal: list[float] = Field(min_length=3, max_length=3)
    offset: float

    @field_validator("normal")
    @classmethod
    def _non_zero(cls, v):
        if not all(np.isfinite(v)) or float(np.linalg.norm(v)) == 0.0:
            raise ValueError("plane normal must be a finite non-zero 3-vector")
        return v


class CameraSpec(BaseModel):
    position: list[float] = Field(min_length=3, max_length=3)
    orientation: list[float] = Field(min_length=4, max_length=4)
    vertical_fov: float = Field(gt=0, lt=np.pi)
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    near: float = Field(default=0.01, gt=0)

    @field_validator("orientation")
    @classmethod
    def _unit(cls, v):
        n = float(np.linalg.norm(v))
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("camera orientation must be a non-zero quaternion")
        return [float(x) / n for x in v]


class RenderRequest(BaseModel):
    case_id: str
    plane: PlaneSpec
    camera: CameraSpec
    mode: Literal["unsliced", "hard", "modulated"] = "modulated"
    k_sigma: float = Field(default=3.0, gt=0)

    @field_validator("camera")
    @classmethod
    def _cap_pixels(cls, v: CameraSpec):
        if v.width * v.height > MAX_PIXELS:
            raise ValueError(f"viewport exceeds the {MAX_PIXELS}-pixel service cap")
        return v


class AssetStore:
    """Decode-once cache over a directory of encoded assets."""

    def __init__(self, root):
        self.root = Path(root)
        self._assets: dict[str, LayeredAsset] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def case_ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob(f"*{ASSET_SUFFIX}"))

    def _lock_for(self, case_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(case_id, threading.Lock())

    def get(self, case_id: str) -> LayeredAsset:
        asset = self._assets.get(case_id)
        if asset is not None:
            return asset
        path = self.root / f"{case_id}{ASSET_SUFFIX}"
        if not path.is_file():
            raise KeyError(case_id)
        with self._lock_for(case_id):
            asset = self._assets.get(case_id)
            if asset is None:
                asset = load_asset(path)
                self._assets[case_id] = asset
        return asset

    def descriptors(self) -> tuple[list[dict], list[str]]:
        cases, warnings = [], []
        for case_id in self.case_ids():
            try:
                asset = self.get(case_id)
            except SplatsliceError as e:
                warnings.append(f"{case_id}{ASSET_SUFFIX}: {e}")
                continue
            cases.append(
                {
                    "case_id": case_id,
                    "display_name": case_id,
                    "states": asset.num_states,
                    "base_count": asset.base_count,
                    "delta_total": asset.delta_total,
                    "bounds": asset.bounds.astype(float).tolist(),
                    "offsets_range": [float(asset.offsets[0]), float(asset.offsets[-1])],
                }
            )
        return cases, warnings


def create_app(asset_dir, ui_dir=None) -> FastAPI:
    store = AssetStore(asset_dir)
    app = FastAPI(title="splatslice viewer service")

    @app.get("/healthz")
    def healthz():
        return Response(content="ok", media_type="text/plain")

    @app.get("/cases")
    def cases():
        case_list, warnings = store.descriptors()
        return {"cases": case_list, "warnings": warnings}

    @app.post("/render")
    def render_frame(req: RenderRequest, request: Request):
        try:
            asset = store.get(req.case_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown case {req.case_id!r}")
        plane = SlicingPlane.from_unnormalized(req.plane.normal, req.plane.offset)
        camera = CameraPose(
            position=np.array(req.camera.position),
            orientation=np.array(req.camera.orientation),
            vertical_fov=req.camera.vertical_fov,
            width=req.camera.width,
            height=req.camera.height,
            near=req.camera.near,
        )
        t0 = time.perf_counter()
        frame = render(asset, plane, camera, RenderMode.parse(req.mode), req.k_sigma)
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        headers = {
            "X-Width": str(frame.width),
            "X-Height": str(frame.height),
            "X-Render-Ms": f"{elapsed_ms:.3f}",
            "X-State-Index": str(select_state(asset, plane)),
        }
        accept = request.headers.get("accept", "")
        if "image/png" in accept:
            return Response(frame.to_png_bytes(), media_type="image/png", headers=headers)
        return Response(
            frame.pixels.tobytes(), media_type="application/octet-stream", headers=headers
        )

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app

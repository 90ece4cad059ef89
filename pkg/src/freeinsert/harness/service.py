"""HTTP service: job submission/polling over the generation engine, fast
paste-only previews, and asset/knob discovery for the placement UI.

Generation jobs run on a bounded worker pool (one worker by default, the
single-accelerator setup); each job gets its own backend instance and RNG
stream. The preview endpoint bypasses the queue entirely — it is pure pixel
math.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import queue
import threading
import time
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from ..compositing import Placement, RenderedObject, paste
from ..engine import run_controllable_generation
from ..errors import FreeInsertError, PlacementError
from ..images import load_depth, load_image, load_rgba, save_image, to_uint8
from ..request import KNOB_RANGES, CompositeRequest
from .manifest import BenchmarkManifest
from .profiles import load_profile

logger = logging.getLogger(__name__)


class PlacementModel(BaseModel):
    x: int
    y: int
    scale: float = 1.0
    rotation_deg: float = 0.0


class JobRequestModel(BaseModel):
    object: str
    view_tag: str
    background: str
    placement: PlacementModel
    prompt: str | None = None
    tau_f: float = Field(default=0.2, ge=0.0, le=1.0)
    tau_q: float = Field(default=0.5, ge=0.0, le=1.0)
    tau_k: float = Field(default=0.5, ge=0.0, le=1.0)
    seed: int = 0
    guidance: float = Field(default=5.0, ge=0.0)
    style_weight: float = Field(default=0.6, ge=0.0)
    content_weight: float = Field(default=0.8, ge=0.0)
    num_steps: int = Field(default=50, ge=1, le=200)


class PreviewRequestModel(BaseModel):
    object: str
    view_tag: str
    background: str
    placement: PlacementModel
    dilate_radius: int = 8


@dataclass
class Job:
    job_id: str
    request: dict
    status: str = "submitted"  # submitted | running | done | failed
    result: dict | None = None
    error: str | None = None
    submitted_at: float = field(default_factory=time.time)


class AssetRegistry:
    """Registered objects/backgrounds/renders, loaded from a manifest JSON."""

    def __init__(self, manifest: BenchmarkManifest):
        self.objects = {o.id: o for o in manifest.objects}
        self.backgrounds = {b.id: b for b in manifest.backgrounds}

    def views(self, object_id: str) -> list[str]:
        return [r.view_tag for r in self.objects[object_id].renders]

    def resolve(self, object_id: str, view_tag: str, background_id: str):
        obj = self.objects.get(object_id)
        if obj is None:
            raise LookupError("object")
        renders = [r for r in obj.renders if r.view_tag == view_tag]
        if not renders:
            raise LookupError("view_tag")
        bg = self.backgrounds.get(background_id)
        if bg is None:
            raise LookupError("background")
        return obj, renders[0], bg


def _png_b64(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(arr)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def knob_ranges() -> dict:
    ranges = {k: list(v) for k, v in KNOB_RANGES.items()}
    ranges["num_steps"] = [1, 200]
    return ranges


def create_app(
    assets_path: str | Path,
    backend_profile: str | None = None,
    output_dir: str | Path = "service-runs",
    workers: int = 1,
) -> FastAPI:
    manifest = BenchmarkManifest.load(assets_path)
    registry = AssetRegistry(manifest)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    jobs: dict[str, Job] = {}
    jobs_lock = threading.Lock()
    work_queue: "queue.Queue[str | None]" = queue.Queue()

    state = {"profile": None, "ready": False, "error": None}
    try:
        state["profile"] = load_profile(backend_profile)
        state["ready"] = True
    except FreeInsertError as exc:
        state["error"] = str(exc)
        logger.error("backend profile failed to load: %s", exc)

    def run_job(job: Job) -> None:
        profile = state["profile"]
        body = job.request
        obj, render_ref, bg_ref = registry.resolve(body["object"], body["view_tag"], body["background"])
        render = RenderedObject(
            rgba=load_rgba(render_ref.rgba),
            depth=_depth(render_ref.depth),
            view_tag=render_ref.view_tag,
        )
        req = CompositeRequest(
            object_image=load_image(obj.image),
            background=load_image(bg_ref.path),
            render=render,
            placement=Placement(**body["placement"]),
            prompt=body.get("prompt"),
            object_tag=obj.id,
            tau_f=body["tau_f"],
            tau_q=body["tau_q"],
            tau_k=body["tau_k"],
            seed=body["seed"],
            guidance=body["guidance"],
            style_weight=body["style_weight"],
            content_weight=body["content_weight"],
            backend_profile=profile.name,
        )
        schedule = profile.schedule(int(body.get("num_steps", 50)))
        denoiser = profile.denoiser_for((3, *req.background.shape[:2]))
        result = run_controllable_generation(
            req, denoiser, profile.vae, schedule,
            content_extractor=profile.content_extractor,
            style_extractor=profile.style_extractor,
            estimator=profile.estimator,
        )
        job_dir = output_dir / job.job_id
        job_dir.mkdir(parents=True, exist_ok=True)
        save_image(result.image, job_dir / "image.png")
        with open(job_dir / "metadata.json", "w") as f:
            json.dump(result.metadata, f, indent=2, sort_keys=True, default=str)
        with open(job_dir / "injection_log.json", "w") as f:
            json.dump(result.injection_log, f)
        import hashlib

        job.result = {
            "image": str(job_dir / "image.png"),
            "metadata": str(job_dir / "metadata.json"),
            "injection_log": str(job_dir / "injection_log.json"),
            "image_sha256": hashlib.sha256((job_dir / "image.png").read_bytes()).hexdigest(),
        }

    def worker_loop():
        while True:
            job_id = work_queue.get()
            if job_id is None:
                return
            with jobs_lock:
                job = jobs[job_id]
                job.status = "running"
            try:
                run_job(job)
                job.status = "done"
            except Exception as exc:
                logger.exception("job %s failed", job_id)
                job.status = "failed"
                job.error = str(exc)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        threads = [threading.Thread(target=worker_loop, daemon=True) for _ in range(workers)]
        for th in threads:
            th.start()
        yield
        for _ in threads:
            work_queue.put(None)

    app = FastAPI(title="freeinsert", lifespan=lifespan)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        fields = sorted({str(e["loc"][-1]) for e in exc.errors()})
        return JSONResponse(
            status_code=400,
            content={"detail": "invalid request", "fields": fields},
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok" if state["ready"] else "degraded", "backend_ready": state["ready"]}

    @app.get("/assets")
    def assets():
        return {
            "objects": [
                {"id": oid, "views": registry.views(oid)} for oid in sorted(registry.objects)
            ],
            "backgrounds": sorted(registry.backgrounds),
            "knobs": knob_ranges(),
        }

    @app.get("/renders/{object_id}")
    def renders(object_id: str):
        if object_id not in registry.objects:
            return JSONResponse(status_code=404, content={"detail": f"unknown object {object_id!r}"})
        return {"object": object_id, "views": registry.views(object_id)}

    @app.get("/backgrounds/{background_id}")
    def background_image(background_id: str):
        """Raw background pixels, so the studio can run its client-side diff."""
        ref = registry.backgrounds.get(background_id)
        if ref is None:
            return JSONResponse(status_code=404, content={"detail": f"unknown background {background_id!r}"})
        bg = load_image(ref.path)
        return {"image_b64": _png_b64(bg), "width": int(bg.shape[1]), "height": int(bg.shape[0])}

    @app.post("/jobs")
    def submit_job(body: JobRequestModel):
        if not state["ready"]:
            return JSONResponse(
                status_code=503,
                content={"detail": f"backend not ready: {state['error']}"},
            )
        try:
            registry.resolve(body.object, body.view_tag, body.background)
        except LookupError as exc:
            field_name = exc.args[0]
            return JSONResponse(
                status_code=400,
                content={"detail": f"unknown {field_name}", "field": field_name},
            )
        job = Job(job_id=uuid.uuid4().hex[:12], request=body.model_dump())
        with jobs_lock:
            jobs[job.job_id] = job
        work_queue.put(job.job_id)
        return {"job_id": job.job_id, "status": job.status}

    @app.get("/jobs/{job_id}")
    def job_detail(job_id: str):
        with jobs_lock:
            job = jobs.get(job_id)
        if job is None:
            return JSONResponse(status_code=404, content={"detail": f"unknown job {job_id!r}"})
        return {
            "job_id": job.job_id,
            "status": job.status,
            "request": job.request,
            "result": job.result,
            "error": job.error,
        }

    @app.post("/preview")
    def preview(body: PreviewRequestModel):
        try:
            obj, render_ref, bg_ref = registry.resolve(body.object, body.view_tag, body.background)
        except LookupError as exc:
            field_name = exc.args[0]
            return JSONResponse(
                status_code=400,
                content={"detail": f"unknown {field_name}", "field": field_name},
            )
        render = RenderedObject(
            rgba=load_rgba(render_ref.rgba),
            depth=_depth(render_ref.depth),
            view_tag=render_ref.view_tag,
        )
        bg = load_image(bg_ref.path)
        try:
            coarse, mask = paste(
                render, bg, Placement(**body.placement.model_dump()),
                dilate_radius=body.dilate_radius,
            )
        except PlacementError as exc:
            return JSONResponse(
                status_code=400,
                content={"detail": str(exc), "field": "placement", "suggestion": exc.suggestion},
            )
        return {
            "image_b64": _png_b64(coarse),
            "mask_b64": _png_b64(mask.pixel_mask.astype(np.float64)),
            "width": int(bg.shape[1]),
            "height": int(bg.shape[0]),
        }

    return app


def _depth(path: str):
    from ..compositing import DepthMap

    return DepthMap(values=load_depth(path))


def serve(assets_path, backend_profile=None, host="127.0.0.1", port=8077, workers=1, output_dir="service-runs"):
    import uvicorn

    app = create_app(assets_path, backend_profile, output_dir=output_dir, workers=workers)
    uvicorn.run(app, host=host, port=port)

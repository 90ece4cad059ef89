"""Benchmark manifest loading and the resumable benchmark runner.

Run directory layout (diffable and resumable):

    {run_dir}/
      outputs/{pair_id}/image.png, metadata.json, injection_log.json
      records/{pair_id}.json
      report.json

A pair is skipped on rerun when its record exists and its request hash
matches the manifest's current request for that pair. report.json carries no
timing, so an interrupted-then-resumed run reports exactly what an
uninterrupted one does; wall-clock lives in the records.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..compositing import Placement, RenderedObject
from ..engine import run_controllable_generation
from ..errors import AssetError, ConfigError, FreeInsertError
from ..images import content_hash, load_depth, load_image, load_rgba, save_image
from ..metrics import MetricsReport, compute_pair_metrics, region_from_mask
from ..request import CompositeRequest
from .profiles import ProfileRuntime, load_profile

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RenderRef:
    rgba: str
    depth: str
    view_tag: str


@dataclass(frozen=True)
class ObjectRef:
    id: str
    image: str
    renders: tuple[RenderRef, ...]


@dataclass(frozen=True)
class BackgroundRef:
    id: str
    path: str


@dataclass(frozen=True)
class PairSpec:
    pair_id: str
    object: ObjectRef
    render: RenderRef
    background: BackgroundRef
    placement: Placement
    seed: int


@dataclass
class BenchmarkManifest:
    objects: list[ObjectRef]
    backgrounds: list[BackgroundRef]
    pairs: list[PairSpec]
    config: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "BenchmarkManifest":
        path = Path(path)
        if not path.exists():
            raise AssetError(f"manifest file not found: {path}", missing=[str(path)])
        try:
            with open(path) as f:
                raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from exc
        base = path.parent

        def resolve(p: str) -> str:
            q = Path(p)
            return str(q if q.is_absolute() else base / q)

        objects = []
        for o in raw.get("objects", []):
            renders = tuple(
                RenderRef(rgba=resolve(r["rgba"]), depth=resolve(r["depth"]), view_tag=r.get("view_tag", f"view{i}"))
                for i, r in enumerate(o.get("renders", []))
            )
            objects.append(ObjectRef(id=o["id"], image=resolve(o["image"]), renders=renders))
        backgrounds = [BackgroundRef(id=b["id"], path=resolve(b["path"])) for b in raw.get("backgrounds", [])]

        obj_ids = [o.id for o in objects]
        bg_ids = [b.id for b in backgrounds]
        if len(set(obj_ids)) != len(obj_ids) or len(set(bg_ids)) != len(bg_ids):
            raise ConfigError("manifest ids must be unique")

        config = dict(raw.get("config", {}))
        default_placement = raw.get("placement", {"x": 0, "y": 0, "scale": 1.0})
        by_obj = {o.id: o for o in objects}
        by_bg = {b.id: b for b in backgrounds}

        pairs: list[PairSpec] = []
        raw_pairs = raw.get("pairs", "cross")
        base_seed = int(config.get("seed", 0))
        if raw_pairs == "cross":
            k = 0
            for o in objects:
                for r in o.renders:
                    for b in backgrounds:
                        pairs.append(
                            PairSpec(
                                pair_id=_pair_id(o.id, r.view_tag, b.id),
                                object=o,
                                render=r,
                                background=b,
                                placement=Placement(**default_placement),
                                seed=base_seed + k,
                            )
                        )
                        k += 1
        else:
            for k, p in enumerate(raw_pairs):
                try:
                    o = by_obj[p["object"]]
                    b = by_bg[p["background"]]
                except KeyError as exc:
                    raise ConfigError(f"pair references unknown id {exc.args[0]!r}") from exc
                wanted = p.get("view_tag")
                matches = [r for r in o.renders if wanted is None or r.view_tag == wanted]
                if not matches:
                    raise ConfigError(f"object {o.id!r} has no render with view_tag {wanted!r}")
                r = matches[0]
                pairs.append(
                    PairSpec(
                        pair_id=p.get("id") or _pair_id(o.id, r.view_tag, b.id),
                        object=o,
                        render=r,
                        background=b,
                        placement=Placement(**p.get("placement", default_placement)),
                        seed=int(p.get("seed", base_seed + k)),
                    )
                )

        manifest = cls(objects=objects, backgrounds=backgrounds, pairs=pairs, config=config)
        manifest.validate_files()
        return manifest

    def validate_files(self) -> None:
        """Manifest closure: every referenced file must exist before the
        first generation; all dangling paths are reported together."""
        missing = []
        for o in self.objects:
            if not Path(o.image).exists():
                missing.append(o.image)
            for r in o.renders:
                missing.extend(p for p in (r.rgba, r.depth) if not Path(p).exists())
        missing.extend(b.path for b in self.backgrounds if not Path(b.path).exists())
        if missing:
            raise AssetError("manifest references missing files: " + ", ".join(missing), missing=missing)


def _pair_id(obj_id: str, view_tag: str, bg_id: str) -> str:
    safe_view = view_tag.replace("=", "-").replace("/", "-").replace(" ", "_")
    return f"{obj_id}__{safe_view}__{bg_id}"


def build_request(pair: PairSpec, config: dict) -> CompositeRequest:
    render = RenderedObject(
        rgba=load_rgba(pair.render.rgba),
        depth=_depth_for(pair.render.depth),
        view_tag=pair.render.view_tag,
    )
    return CompositeRequest(
        object_image=load_image(pair.object.image),
        background=load_image(pair.background.path),
        render=render,
        placement=pair.placement,
        prompt=config.get("prompt"),
        object_tag=pair.object.id,
        tau_f=float(config.get("tau_f", 0.2)),
        tau_q=float(config.get("tau_q", 0.5)),
        tau_k=float(config.get("tau_k", 0.5)),
        seed=pair.seed,
        guidance=float(config.get("guidance", 5.0)),
        content_weight=float(config.get("content_weight", 0.8)),
        style_weight=float(config.get("style_weight", 0.6)),
        use_content_embedding=bool(config.get("use_content_embedding", True)),
        use_style_embedding=bool(config.get("use_style_embedding", True)),
        dilate_radius=int(config.get("dilate_radius", 8)),
        bg_depth_source=config.get("bg_depth_source", "constant_far"),
        branch1_mode=config.get("branch1_mode", "replay"),
        backend_profile=config.get("backend_profile", "toy"),
        source_paths={
            "object": pair.object.image,
            "background": pair.background.path,
            "render": pair.render.rgba,
            "render_depth": pair.render.depth,
        },
    )


def _depth_for(path: str):
    from ..compositing import DepthMap

    return DepthMap(values=load_depth(path))


def request_hash(req: CompositeRequest, profile_name: str, num_steps: int, baseline: str | None) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(req.knobs(), sort_keys=True).encode())
    h.update(content_hash(req.object_image).encode())
    h.update(content_hash(req.background).encode())
    h.update(content_hash(req.render.rgba).encode())
    h.update(content_hash(req.render.depth.values).encode())
    h.update(profile_name.encode())
    h.update(str(num_steps).encode())
    h.update((baseline or "pipeline").encode())
    return h.hexdigest()


def run_pair(
    pair: PairSpec,
    config: dict,
    profile: ProfileRuntime,
    out_dir: Path,
    baseline: str | None = None,
) -> dict:
    """Generate one pair, write its outputs, return the run record dict."""
    req = build_request(pair, config)
    num_steps = int(config.get("num_steps", 50))
    schedule = profile.schedule(num_steps)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()

    if baseline == "paste":
        from ..compositing import compose_depth, paste

        image, mask = paste(
            req.render, req.background, req.placement,
            dilate_radius=req.dilate_radius, latent_scale_factor=profile.vae.scale_factor,
        )
        depth = compose_depth(
            req.render, req.background, req.placement,
            bg_depth_source=req.bg_depth_source, estimator=profile.estimator,
        )
        injection_log: list[dict] = []
        metadata = {"baseline": "paste", "knobs": req.knobs()}
    elif baseline is None:
        latent_shape = (3, *req.background.shape[:2])
        denoiser = profile.denoiser_for(latent_shape)
        result = run_controllable_generation(
            req, denoiser, profile.vae, schedule,
            content_extractor=profile.content_extractor,
            style_extractor=profile.style_extractor,
            estimator=profile.estimator,
        )
        image, mask, depth = result.image, result.mask, result.depth_condition
        injection_log = result.injection_log
        metadata = result.metadata
    else:
        raise ConfigError(f"unknown baseline {baseline!r}")

    save_image(image, out_dir / "image.png")
    with open(out_dir / "metadata.json", "w") as f:
        json.dump(metadata, f, indent=2, sort_keys=True, default=str)
    with open(out_dir / "injection_log.json", "w") as f:
        json.dump(injection_log, f)

    region = region_from_mask(mask)
    row = compute_pair_metrics(
        image, req.object_image, req.background, region, profile.metric_backends, render_depth=depth
    )
    return {
        "pair_id": pair.pair_id,
        "request_hash": request_hash(req, profile.name, num_steps, baseline),
        "request": req.knobs(),
        "outputs": {
            "image": str(out_dir / "image.png"),
            "metadata": str(out_dir / "metadata.json"),
            "injection_log": str(out_dir / "injection_log.json"),
        },
        "metrics": row,
        "output_sha256": hashlib.sha256((out_dir / "image.png").read_bytes()).hexdigest(),
        "wall_clock_s": time.time() - started,
        "seed": pair.seed,
        "pipeline_version": __version__,
    }


def run_benchmark(
    manifest: BenchmarkManifest,
    run_dir: str | Path,
    profile: ProfileRuntime | None = None,
    baseline: str | None = None,
) -> tuple[MetricsReport, list[str]]:
    """Execute every pair, resuming past completed records; returns the
    aggregate report and the ids of failed pairs."""
    run_dir = Path(run_dir)
    records_dir = run_dir / "records"
    outputs_dir = run_dir / "outputs"
    records_dir.mkdir(parents=True, exist_ok=True)
    outputs_dir.mkdir(parents=True, exist_ok=True)
    if profile is None:
        profile = load_profile(manifest.config.get("backend_profile"))

    report = MetricsReport(metadata={"profile": profile.name, "baseline": baseline or "pipeline"})
    failures: list[str] = []
    num_steps = int(manifest.config.get("num_steps", 50))

    for pair in manifest.pairs:
        record_path = records_dir / f"{pair.pair_id}.json"
        record = None
        if record_path.exists():
            with open(record_path) as f:
                existing = json.load(f)
            req = build_request(pair, manifest.config)
            if existing.get("request_hash") == request_hash(req, profile.name, num_steps, baseline):
                logger.info("skipping completed pair %s", pair.pair_id)
                record = existing
            else:
                logger.info("request changed for pair %s; recomputing", pair.pair_id)
        if record is None:
            try:
                record = run_pair(pair, manifest.config, profile, outputs_dir / pair.pair_id, baseline)
            except FreeInsertError as exc:
                logger.error("pair %s failed: %s", pair.pair_id, exc)
                failures.append(pair.pair_id)
                with open(records_dir / f"{pair.pair_id}.failed.json", "w") as f:
                    json.dump({"pair_id": pair.pair_id, "error": str(exc)}, f)
                continue
            tmp = record_path.with_suffix(".tmp")
            with open(tmp, "w") as f:
                json.dump(record, f, indent=2, sort_keys=True)
            tmp.replace(record_path)
        report.add(record["metrics"], image_id=pair.pair_id)

    report.metadata["failed"] = sorted(failures)
    with open(run_dir / "report.json", "w") as f:
        payload = report.to_dict()
        json.dump(payload, f, indent=2, sort_keys=True)
    return report, failures

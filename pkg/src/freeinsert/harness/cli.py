"""Command-line entrypoint.

    freeinsert generate  — run one insertion (Algorithm-style loop) to files
    freeinsert benchmark — run a manifest, resumable, with metrics report
    freeinsert serve     — HTTP service backing the placement studio
    freeinsert catalog   — dump a backend's feature-tap catalog

Exit codes: 0 success, 2 validation error (message names the offending
flag/field), 3 backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import AssetError, BackendError, ConfigError, ContractError, PlacementError
from ..images import load_depth, load_image, load_rgba, save_image

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BACKEND = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freeinsert", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="run one composition request")
    gen.add_argument("--object", required=True, help="object image (RGB)")
    gen.add_argument("--background", required=True, help="background image (RGB)")
    gen.add_argument("--render", required=True, help="rendered object RGBA (PNG with alpha)")
    gen.add_argument("--render-depth", required=True, help="rendered depth (16-bit PNG or .npy)")
    gen.add_argument("--x", type=int, required=True)
    gen.add_argument("--y", type=int, required=True)
    gen.add_argument("--scale", type=float, default=1.0)
    gen.add_argument("--rotation", type=float, default=0.0)
    gen.add_argument("--prompt", default=None)
    gen.add_argument("--object-tag", default="object")
    gen.add_argument("--view-tag", default="")
    gen.add_argument("--tau-f", type=float, default=0.2)
    gen.add_argument("--tau-q", type=float, default=0.5)
    gen.add_argument("--tau-k", type=float, default=0.5)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--guidance", type=float, default=5.0)
    gen.add_argument("--style-weight", type=float, default=0.6)
    gen.add_argument("--content-weight", type=float, default=0.8)
    gen.add_argument("--num-steps", type=int, default=50)
    gen.add_argument("--dilate-radius", type=int, default=8)
    gen.add_argument("--bg-depth-source", choices=["constant_far", "estimator"], default="constant_far")
    gen.add_argument("--backend-profile", default=None)
    gen.add_argument("--schedule", default=None, help="noise schedule config JSON")
    gen.add_argument("--vlm-config", default=None, help="VLM captioner config JSON")
    gen.add_argument("--out", required=True, help="output directory")

    bench = sub.add_parser("benchmark", help="run a benchmark manifest (resumable)")
    bench.add_argument("--manifest", required=True)
    bench.add_argument("--run-dir", required=True)
    bench.add_argument("--backend-profile", default=None)
    bench.add_argument("--baseline", choices=["paste"], default=None)

    srv = sub.add_parser("serve", help="run the HTTP service")
    srv.add_argument("--assets", required=True, help="assets manifest JSON")
    srv.add_argument("--backend-profile", default=None)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8077)
    srv.add_argument("--workers", type=int, default=1)
    srv.add_argument("--output-dir", default="service-runs")

    cat = sub.add_parser("catalog", help="dump the backend layer catalog")
    cat.add_argument("--backend-profile", default=None)
    cat.add_argument("--latent-shape", default="3,64,64", help="C,H,W used for toy catalogs")

    return parser


def cmd_generate(args) -> int:
    from ..compositing import DepthMap, Placement, RenderedObject
    from ..engine import run_controllable_generation
    from ..request import CompositeRequest
    from .profiles import load_profile

    for flag, path in (
        ("--object", args.object),
        ("--background", args.background),
        ("--render", args.render),
        ("--render-depth", args.render_depth),
    ):
        if not Path(path).exists():
            print(f"error: {flag} file not found: {path}", file=sys.stderr)
            return EXIT_VALIDATION

    render = RenderedObject(
        rgba=load_rgba(args.render),
        depth=DepthMap(values=load_depth(args.render_depth)),
        view_tag=args.view_tag,
    )
    req = CompositeRequest(
        object_image=load_image(args.object),
        background=load_image(args.background),
        render=render,
        placement=Placement(x=args.x, y=args.y, scale=args.scale, rotation_deg=args.rotation),
        prompt=args.prompt,
        object_tag=args.object_tag,
        tau_f=args.tau_f,
        tau_q=args.tau_q,
        tau_k=args.tau_k,
        seed=args.seed,
        guidance=args.guidance,
        style_weight=args.style_weight,
        content_weight=args.content_weight,
        dilate_radius=args.dilate_radius,
        bg_depth_source=args.bg_depth_source,
        source_paths={
            "object": args.object,
            "background": args.background,
            "render": args.render,
            "render_depth": args.render_depth,
        },
    )
    profile = load_profile(args.backend_profile, schedule_path=args.schedule)
    schedule = profile.schedule(args.num_steps)
    denoiser = profile.denoiser_for((3, *req.background.shape[:2]))
    vlm_client = _vlm_client_from_config(args.vlm_config)
    result = run_controllable_generation(
        req, denoiser, profile.vae, schedule,
        vlm_client=vlm_client,
        content_extractor=profile.content_extractor,
        style_extractor=profile.style_extractor,
        estimator=profile.estimator,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(result.image, out / "image.png")
    with open(out / "metadata.json", "w") as f:
        json.dump(result.metadata, f, indent=2, sort_keys=True, default=str)
    with open(out / "injection_log.json", "w") as f:
        json.dump(result.injection_log, f)
    print(f"wrote {out / 'image.png'}")
    return EXIT_OK


def _vlm_client_from_config(path):
    if path is None:
        return None
    from ..conditioning import VlmClient

    if not Path(path).exists():
        raise ConfigError(f"--vlm-config file not found: {path}")
    with open(path) as f:
        cfg = json.load(f)
    return VlmClient(
        mode=cfg.get("mode", "http"),
        endpoint=cfg.get("endpoint", ""),
        timeout_s=float(cfg.get("timeout_s", 30)),
    )


def cmd_benchmark(args) -> int:
    from .manifest import BenchmarkManifest, run_benchmark
    from .profiles import load_profile

    manifest = BenchmarkManifest.load(args.manifest)
    profile = load_profile(args.backend_profile or manifest.config.get("backend_profile"))
    report, failures = run_benchmark(manifest, args.run_dir, profile=profile, baseline=args.baseline)
    print(report.render_table())
    if failures:
        print(f"{len(failures)} pair(s) failed: {', '.join(failures)}", file=sys.stderr)
        return 1
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import serve

    serve(
        args.assets,
        backend_profile=args.backend_profile,
        host=args.host,
        port=args.port,
        workers=args.workers,
        output_dir=args.output_dir,
    )
    return EXIT_OK


def cmd_catalog(args) -> int:
    from .profiles import load_profile

    profile = load_profile(args.backend_profile)
    try:
        shape = tuple(int(x) for x in args.latent_shape.split(","))
        if len(shape) != 3:
            raise ValueError
    except ValueError:
        print("error: --latent-shape must be C,H,W integers", file=sys.stderr)
        return EXIT_VALIDATION
    denoiser = profile.denoiser_for(shape)
    catalog = [
        {"layer_id": s.layer_id, "kind": s.kind, "shape": list(s.shape)}
        for s in denoiser.layer_catalog
    ]
    print(json.dumps({"profile": profile.name, "catalog": catalog}, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "generate": cmd_generate,
        "benchmark": cmd_benchmark,
        "serve": cmd_serve,
        "catalog": cmd_catalog,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, AssetError, ContractError, PlacementError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BackendError as exc:
        ctx = f" (t={exc.timestep}, {exc.branch})" if exc.timestep is not None else ""
        print(f"backend error{ctx}: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())

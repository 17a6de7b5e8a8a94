"""Command-line entry point: compile, render, compare, synth, serve."""

from __future__ import annotations

import argparse
import json
import socket
import sys
from pathlib import Path

import numpy as np

from . import codec, metrics, synth
from .compiler import consolidate
from .core import CameraPose, SlicingPlane
from .errors import InvalidArgumentError, SplatsliceError
from .frames import FrameImage
from .ingest import load_manifest, load_state_sequence
from .renderer import RenderMode, render

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MISMATCH = 3
EXIT_ENV = 4


def _vec(text: str, n: int, flag: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != n:
        raise InvalidArgumentError(f"{flag} expects {n} comma-separated numbers, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError:
        raise InvalidArgumentError(f"{flag} has a non-numeric component in {text!r}") from None


def _camera_from_args(args) -> CameraPose:
    pos = _vec(args.cam_pos, 3, "--cam-pos")
    fov = float(np.radians(args.fov_deg))
    if args.cam_quat is not None:
        quat = _vec(args.cam_quat, 4, "--cam-quat")
        norm = np.linalg.norm(quat)
        if norm == 0:
            raise InvalidArgumentError("--cam-quat must be non-zero")
        return CameraPose(pos, quat / norm, fov, args.width, args.height, args.near)
    target = _vec(args.cam_target, 3, "--cam-target")
    up = _vec(args.cam_up, 3, "--cam-up")
    return CameraPose.look_at(pos, target, up, fov, args.width, args.height, args.near)


def _plane_from_args(args) -> SlicingPlane:
    normal = _vec(args.normal, 3, "--normal")
    if np.linalg.norm(normal) == 0:
        raise InvalidArgumentError("--normal must be non-zero")
    return SlicingPlane.from_unnormalized(normal, args.offset)


def cmd_compile(args) -> int:
    manifest = Path(args.manifest)
    _, entries = load_manifest(manifest)
    input_bytes = sum(p.stat().st_size for p, _ in entries)
    seq = load_state_sequence(manifest)
    asset = consolidate(seq)
    out_bytes = codec.save_asset(asset, args.out)
    summary = {
        "input_bytes": input_bytes,
        "output_bytes": out_bytes,
        "ratio": out_bytes / input_bytes if input_bytes else 0.0,
        "states": asset.num_states,
        "base_count": asset.base_count,
        "delta_total": asset.delta_total,
    }
    print(json.dumps(summary))
    if args.report:
        from .report import write_compile_report

        paths = write_compile_report(
            args.report, summary, [len(d) for d in asset.delta_layers]
        )
        print(f"report written: {', '.join(paths)}", file=sys.stderr)
    return EXIT_OK


def cmd_render(args) -> int:
    asset = codec.load_asset(args.asset)
    frame = render(
        asset,
        _plane_from_args(args),
        _camera_from_args(args),
        RenderMode.parse(args.mode),
        args.k_sigma,
        background=tuple(_vec(args.background, 3, "--background")),
    )
    frame.save_png(args.out)
    print(json.dumps({"out": str(args.out), "width": frame.width, "height": frame.height}))
    return EXIT_OK


def cmd_compare(args) -> int:
    frame_a = FrameImage.load_png(args.image_a)
    frame_b = FrameImage.load_png(args.image_b)
    if (frame_a.width, frame_a.height) != (frame_b.width, frame_b.height):
        print(
            f"error: image sizes differ: {frame_a.width}x{frame_a.height} vs "
            f"{frame_b.width}x{frame_b.height}",
            file=sys.stderr,
        )
        return EXIT_MISMATCH
    report = metrics.compare(frame_a, frame_b)
    print(report.to_json())
    if args.report:
        from .report import write_compare_report

        paths = write_compare_report(
            args.report, frame_a, frame_b, report,
            Path(args.image_a).name, Path(args.image_b).name,
        )
        print(f"report written: {', '.join(paths)}", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args) -> int:
    summary = synth.generate_case(
        args.out_dir,
        states=args.states,
        primitives=args.primitives,
        shared_fraction=args.shared_fraction,
        seed=args.seed,
        sh_degree=args.sh_degree,
        sh_mode=args.sh_mode,
        name=args.name,
    )
    print(json.dumps(summary))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((args.host, args.port))
    except OSError as e:
        print(f"error: cannot bind {args.host}:{args.port}: {e}", file=sys.stderr)
        return EXIT_ENV
    finally:
        probe.close()
    app = create_app(args.asset_dir, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="splatslice",
        description="Compile, slice and serve layered Gaussian splat volumes.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="consolidate a state sequence into one asset")
    c.add_argument("manifest", help="state manifest JSON")
    c.add_argument("-o", "--out", required=True, help="output asset path (.cgsa)")
    c.add_argument("--report", help="directory for the compile report (JSON + figure)")
    c.set_defaults(fn=cmd_compile)

    r = sub.add_parser("render", help="render one frame from an asset")
    r.add_argument("asset", help="encoded asset path")
    r.add_argument("--normal", default="0,0,1", help="plane normal x,y,z")
    r.add_argument("--offset", type=float, default=-1e9, help="plane offset c")
    r.add_argument(
        "--mode", default="modulated", choices=["unsliced", "hard", "modulated"]
    )
    r.add_argument("--k-sigma", type=float, default=3.0, dest="k_sigma")
    r.add_argument("--cam-pos", default="0,0,-4", help="camera position x,y,z")
    r.add_argument("--cam-target", default="0,0,0", help="look-at target x,y,z")
    r.add_argument("--cam-up", default="0,1,0", help="world up x,y,z")
    r.add_argument("--cam-quat", default=None, help="orientation w,x,y,z (overrides target)")
    r.add_argument("--fov-deg", type=float, default=60.0, dest="fov_deg")
    r.add_argument("--width", type=int, default=512)
    r.add_argument("--height", type=int, default=512)
    r.add_argument("--near", type=float, default=0.01)
    r.add_argument("--background", default="0,0,0", help="linear background r,g,b in [0,1]")
    r.add_argument("--out", required=True, help="output PNG path")
    r.set_defaults(fn=cmd_render)

    m = sub.add_parser("compare", help="PSNR/SSIM between two PNGs")
    m.add_argument("image_a")
    m.add_argument("image_b")
    m.add_argument("--report", help="directory for the comparison report (JSON + figure)")
    m.set_defaults(fn=cmd_compare)

    s = sub.add_parser("synth", help="generate a synthetic state sequence")
    s.add_argument("--states", type=int, required=True)
    s.add_argument("--primitives", type=int, required=True)
    s.add_argument(
        "--shared-fraction", type=float, required=True, dest="shared_fraction"
    )
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sh-degree", type=int, default=1, dest="sh_degree")
    s.add_argument("--sh-mode", default="shared", choices=["shared", "unique"], dest="sh_mode")
    s.add_argument("--name", default="case")
    s.add_argument("--out-dir", required=True, dest="out_dir")
    s.set_defaults(fn=cmd_synth)

    v = sub.add_parser("serve", help="serve assets to interactive clients")
    v.add_argument("asset_dir", help="directory containing .cgsa assets")
    v.add_argument("--port", type=int, default=8000)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--ui-dir", default=None, help="static viewer UI directory to mount at /")
    v.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except SplatsliceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

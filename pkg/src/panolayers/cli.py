"""Command-line interface.

Subcommands: build, trajectory, render, metrics, synth, export. All
failures exit nonzero with a machine-readable JSON error on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import metrics as metrics_mod
from . import pipeline
from .trajectory import Trajectory, generate_trajectory


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--config", type=str, default=None, help="YAML config file")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panolayers",
        description="Layered panoramic 3D gaussian scene construction and rendering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="run the full pipeline from a config file")
    _add_common(p)
    p.add_argument("--iterations-base", type=int, default=None)
    p.add_argument("--iterations-layer", type=int, default=None)
    p.add_argument("--n-layers", type=int, default=None)
    p.add_argument("--n-max", type=int, default=None)
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--selector", choices=("grid", "brute", "off"), default=None)

    p = sub.add_parser("trajectory", help="generate a camera trajectory JSON")
    _add_common(p)
    p.add_argument("--kind", required=True, choices=("sweep", "zigzag", "hemisphere"))
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--elevation", type=float, default=0.0)
    p.add_argument("--segments", type=int, default=6)
    p.add_argument("--amplitude", type=float, default=0.5)
    p.add_argument("--forward-length", type=float, default=2.0)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--fov", type=float, default=90.0)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)

    p = sub.add_parser("render", help="render a trajectory from a scene file")
    _add_common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)

    p = sub.add_parser("metrics", help="PSNR/SSIM between two frame directories")
    _add_common(p)
    p.add_argument("--renders", required=True)
    p.add_argument("--references", required=True)

    p = sub.add_parser("synth", help="generate a synthetic test fixture + config")
    _add_common(p)
    p.add_argument("--assets", type=int, default=2)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=256)

    p = sub.add_parser("export", help="export viewer-facing artifacts from a build")
    _add_common(p)
    p.add_argument("--build-dir", required=True)
    return parser


def _cmd_build(args) -> int:
    if not args.config:
        raise ValueError("build requires --config")
    config = pipeline.PipelineConfig.from_yaml(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out:
        config.out_dir = args.out
    for attr, key in (
        ("iterations_base", "iterations_base"),
        ("iterations_layer", "iterations_layer"),
        ("n_layers", "n_layers"),
        ("n_max", "n_max"),
        ("beta1", "beta1"),
        ("selector", "selector"),
    ):
        val = getattr(args, attr)
        if val is not None:
            setattr(config, key, val)
    result = pipeline.run_build(config)
    print(f"scene: {result.scene_path}")
    print(f"manifest: {result.manifest_path}")
    return 0


def _cmd_trajectory(args) -> int:
    if not args.out:
        raise ValueError("trajectory requires --out")
    kind = args.kind
    common = dict(fov_deg=args.fov, width=args.width, height=args.height)
    if kind == "sweep":
        traj = generate_trajectory(
            "sweep", frames=args.frames, elevation_deg=args.elevation, **common
        )
    elif kind == "zigzag":
        traj = generate_trajectory(
            "zigzag",
            segments=args.segments,
            amplitude=args.amplitude,
            forward_length=args.forward_length,
            frames=args.frames,
            **common,
        )
    else:
        traj = generate_trajectory("hemisphere", radius=args.radius, **common)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    traj.save(out)
    print(f"trajectory: {out} ({len(traj)} poses)")
    return 0


def _cmd_render(args) -> int:
    if not args.out:
        raise ValueError("render requires --out")
    traj = Trajectory.load(args.trajectory)
    paths = pipeline.render_trajectory_frames(
        args.scene, traj, args.out, width=args.width, height=args.height
    )
    print(f"rendered {len(paths)} frames to {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    renders = sorted(Path(args.renders).glob("*.png"))
    references = sorted(Path(args.references).glob("*.png"))
    report = metrics_mod.compute_metrics(renders, references)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"report: {args.out}")
    else:
        print(text)
    print(f"mean_psnr={report['mean_psnr']:.3f} mean_ssim={report['mean_ssim']:.4f}")
    return 0


def _cmd_synth(args) -> int:
    if not args.out:
        raise ValueError("synth requires --out")
    config = pipeline.write_synth_fixture(
        args.out, seed=args.seed or 0, n_assets=args.assets,
        width=args.width, height=args.height,
    )
    print(f"fixture: {args.out}")
    print(f"config: {Path(args.out) / 'config.yaml'}")
    print(f"suggested beta1: {config.beta1}")
    return 0


def _cmd_export(args) -> int:
    if not args.out:
        raise ValueError("export requires --out")
    paths = pipeline.export_scene(args.build_dir, args.out)
    for p in paths:
        print(f"exported: {p}")
    return 0


_HANDLERS = {
    "build": _cmd_build,
    "trajectory": _cmd_trajectory,
    "render": _cmd_render,
    "metrics": _cmd_metrics,
    "synth": _cmd_synth,
    "export": _cmd_export,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(
            json.dumps({"error": str(exc), "type": type(exc).__name__}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())

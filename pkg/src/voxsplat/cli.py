"""Command-line interface.

Subcommands: train, eval, render, export, gen-data. Train options mirror the
TrainConfig fields one-to-one, so any config-file value can be overridden on
the command line. Exit codes: 0 success, 2 configuration error, 3 numeric
failure during training.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

import numpy as np

from . import synthdata as sd
from .pipeline import (ABLATION_FLAGS, NumericFailure, TrainConfig,
                       evaluate_checkpoint, export_surfels, fixture_scene_data,
                       load_checkpoint, load_scene_dirs, render_orbit,
                       restore_model, train)

_DEFAULTS = TrainConfig()


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "ablate":
            parser.add_argument("--ablate", action="append", choices=ABLATION_FLAGS,
                                default=None, help="disable one component (repeatable)")
        elif f.name == "schedule":
            parser.add_argument(flag, type=str, default=None,
                                help="refiner channel widths, comma separated")
        else:
            kind = type(getattr(_DEFAULTS, f.name))
            parser.add_argument(flag, type=kind, default=None)


def _build_config(args) -> TrainConfig:
    rec = {}
    if args.config:
        with open(args.config) as fh:
            rec = json.load(fh)
    for f in fields(TrainConfig):
        value = getattr(args, f.name)
        if value is None:
            continue
        if f.name == "schedule":
            value = [int(tok) for tok in value.split(",") if tok]
        rec[f.name] = value
    return TrainConfig.from_json(rec)


def _load_scene_for(args, config: TrainConfig):
    if getattr(args, "scene", None):
        return load_scene_dirs(args.scene)[0]
    return fixture_scene_data(config)


def cmd_train(args) -> int:
    config = _build_config(args)
    if args.scenes:
        scenes = load_scene_dirs(args.scenes)
    else:
        scenes = [fixture_scene_data(config)]
    summary = train(config, scenes, args.out, resume=args.resume)
    print(f"finished: checkpoint {summary['checkpoint']} "
          f"({summary['elapsed_s']:.1f}s)")
    return 0


def cmd_eval(args) -> int:
    scenes = load_scene_dirs(args.scenes)
    records = evaluate_checkpoint(args.ckpt, scenes, backend=args.backend or None)
    with open(args.json, "w") as fh:
        json.dump(records, fh, indent=1)
    if records:
        mean_psnr = float(np.mean([r["psnr"] for r in records]))
        print(f"{len(records)} scene(s): mean psnr {mean_psnr:.2f} dB -> {args.json}")
    else:
        print(f"no held-out views; wrote empty metrics -> {args.json}")
    return 0


def cmd_render(args) -> int:
    config, arrays, _ = load_checkpoint(args.ckpt)
    model = restore_model(config, arrays)
    scene = _load_scene_for(args, config)
    rgb, nor, poses = scene.input_stacks()
    surfels = model(rgb, nor, poses)
    render_orbit(surfels, scene, args.out, args.views,
                 backend=args.backend or (config.backend or None))
    print(f"rendered {args.views} view(s) -> {args.out}")
    return 0


def cmd_export(args) -> int:
    config, arrays, _ = load_checkpoint(args.ckpt)
    model = restore_model(config, arrays)
    scene = _load_scene_for(args, config)
    export_surfels(model, scene, args.ply, turntable_dir=args.out,
                   n_turntable=args.turntable,
                   backend=config.backend or None)
    print(f"wrote surfels -> {args.ply}")
    return 0


def cmd_gen_data(args) -> int:
    if args.spec:
        with open(args.spec) as fh:
            spec = sd.ViewsetSpec.from_json(json.load(fh))
    else:
        spec = sd.ViewsetSpec(sd.fixture_scene())
    train_views, held_views = sd.make_viewset(spec)
    if args.perturb:
        rng = np.random.default_rng(args.seed)
        train_views = sd.inconsistency_perturb(train_views, args.perturb, rng)
    sd.save_viewset(args.out, spec, train_views, held_views)
    print(f"wrote {len(train_views)} train / {len(held_views)} held-out views -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxsplat",
                                     description="Multi-view surfel reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="JSON config file (TrainConfig fields)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenes", help="directory of generated viewsets (default: built-in fixture)")
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out views")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--json", required=True, help="output metrics file")
    p.add_argument("--backend", default="")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render orbit views from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", help="viewset directory supplying input views")
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("export", help="export decoded surfels as PLY")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ply", required=True)
    p.add_argument("--scene", help="viewset directory supplying input views")
    p.add_argument("--out", help="directory for turntable renders")
    p.add_argument("--turntable", type=int, default=0)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gen-data", help="generate a synthetic viewset")
    p.add_argument("--spec", help="scene + viewset JSON (default: built-in fixture)")
    p.add_argument("--out", required=True)
    p.add_argument("--perturb", type=float, default=0.0,
                   help="cross-view inconsistency magnitude")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

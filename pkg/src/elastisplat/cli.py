"""Command-line lifecycle: train, compress, render, eval, serve.

`elastisplat train --help` lists every training config key; flags override
values from `--config file.json`, which override the defaults. All
subcommands are deterministic given the seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .core import GaussianModel
from .errors import ConfigError, ElastisplatError, FormatError, InvalidRatioError
from .infer import compress, eval_ratios
from .io import (
    SceneDataset,
    generate_synthetic,
    load_cameras,
    load_dataset,
    read_pointlist,
    save_dataset,
    save_image,
    write_pointlist,
)
from .render import RenderOptions, render_image
from .train import TrainConfig, build_config, load_bundle, save_bundle, train
from .validation import check_ratio


# -- config plumbing -----------------------------------------------------------------


def _load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"config file is not valid JSON: {exc.msg}",
                          offset=exc.pos) from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object", field="config")
    return data


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    defaults = TrainConfig()
    for f in dataclasses.fields(TrainConfig):
        default = getattr(defaults, f.name)
        flag = "--" + f.name.replace("_", "-")
        sub.add_argument(flag, dest=f"cfg_{f.name}", default=None, metavar="V",
                         help=f"config key {f.name} (default {default})")


def _collect_config(args) -> TrainConfig:
    overrides = {}
    if args.config:
        overrides.update(_load_config_file(args.config))
    for f in dataclasses.fields(TrainConfig):
        value = getattr(args, f"cfg_{f.name}")
        if value is not None:
            overrides[f.name] = value
    return build_config(overrides)


# -- dataset plumbing ----------------------------------------------------------------


def _add_scene_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--dataset", default=None, metavar="DIR",
                     help="scene directory (cameras.json + images)")
    sub.add_argument("--synthetic", default=None, type=int, metavar="SEED",
                     help="generate the built-in synthetic scene instead")
    sub.add_argument("--synthetic-points", default=400, type=int, metavar="N")
    sub.add_argument("--synthetic-views", default=12, type=int, metavar="N")
    sub.add_argument("--synthetic-image-size", default=32, type=int, metavar="PX")
    sub.add_argument("--synthetic-holdout-every", default=4, type=int, metavar="K",
                     help="every K-th view becomes a test view (0 disables)")


def _resolve_scene(args):
    """(dataset, init model or None) from --dataset or --synthetic flags."""
    if args.synthetic is not None and args.dataset is not None:
        raise ConfigError("--dataset and --synthetic are mutually exclusive",
                          field="dataset")
    if args.synthetic is not None:
        scene = generate_synthetic(
            seed=args.synthetic,
            n_points=args.synthetic_points,
            n_views=args.synthetic_views,
            image_size=args.synthetic_image_size,
            holdout_every=args.synthetic_holdout_every,
        )
        return scene.dataset, scene.init_model
    if args.dataset is not None:
        return load_dataset(args.dataset), None
    raise ConfigError("provide --dataset DIR or --synthetic SEED", field="dataset")


def _random_init(dataset: SceneDataset, n_points: int, seed: int) -> GaussianModel:
    """Gray starter cloud spread through the camera orbit volume."""
    centers = []
    for cam in dataset.cameras:
        r = cam.world_to_camera[:3, :3]
        centers.append(-r.T @ cam.world_to_camera[:3, 3])
    centers = np.array(centers)
    mid = centers.mean(axis=0)
    radius = float(np.linalg.norm(centers - mid, axis=1).max())
    rng = np.random.default_rng(seed)
    positions = mid + rng.uniform(-0.5, 0.5, (n_points, 3)) * radius
    sh = np.zeros((n_points, 3, 4))
    sh[:, :, 0] = rng.uniform(-0.5, 0.5, (n_points, 3))
    rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n_points, 1))
    return GaussianModel(
        positions=positions,
        log_scales=np.full((n_points, 3), np.log(0.03 * radius)),
        rotations=rotations,
        opacities=np.full(n_points, np.log(0.1 / 0.9)),
        sh=sh,
    )


def _parse_background(text: str) -> tuple:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 3:
        raise ConfigError("expected three comma-separated values",
                          field="background")
    return tuple(float(p) for p in parts)


# -- subcommands ---------------------------------------------------------------------


def cmd_train(args) -> int:
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".metrics.jsonl")

    if args.resume:
        resume = load_bundle(args.resume)
        dataset, _ = _resolve_scene(args)
        bundle = train(dataset, config=resume.config, log_path=log_path,
                       resume=resume, stop_after=args.stop_after)
    else:
        config = _collect_config(args)
        dataset, init_model = _resolve_scene(args)
        if init_model is None:
            if args.init:
                init_model = read_pointlist(args.init)
            else:
                init_model = _random_init(dataset, args.init_points, config.seed)
        bundle = train(dataset, init_model, config, log_path=log_path,
                       stop_after=args.stop_after)

    if args.save_dataset:
        save_dataset(args.save_dataset, dataset)
    save_bundle(out, bundle)
    print(f"wrote {out} ({bundle.model.n} gaussians, "
          f"stage-2 iteration {bundle.iteration}); metrics in {log_path}")
    return 0


def cmd_compress(args) -> int:
    bundle = load_bundle(args.checkpoint)
    compact = compress(bundle, args.ratio, source=str(args.checkpoint))
    write_pointlist(compact.model, args.out)
    print(f"wrote {args.out} ({compact.n} of {bundle.model.n} gaussians "
          f"at ratio {compact.ratio})")
    return 0


def _sniff_model(path) -> str:
    with open(path, "rb") as handle:
        magic = handle.read(4)
    if magic == b"ESPL":
        return "checkpoint"
    if magic[:3] == b"ply":
        return "pointlist"
    raise FormatError(f"{path} is neither a checkpoint nor a point list", offset=0)


def cmd_render(args) -> int:
    cameras = load_cameras(args.camera)
    if not 0 <= args.view < len(cameras):
        raise ConfigError(
            f"view index {args.view} outside 0..{len(cameras) - 1}", field="view")
    camera = cameras[args.view]

    kind = _sniff_model(args.model)
    if kind == "checkpoint":
        bundle = load_bundle(args.model)
        background = (_parse_background(args.background) if args.background
                      else tuple(bundle.config.background))
        model = compress(bundle, args.ratio).model
    else:
        if check_ratio(args.ratio) != 1.0:
            raise InvalidRatioError(
                "a point list is already compacted; render it at ratio 1")
        background = (_parse_background(args.background) if args.background
                      else (1.0, 1.0, 1.0))
        model = read_pointlist(args.model)

    image = render_image(model, camera, options=RenderOptions(background=background))
    save_image(image, args.out)
    print(f"wrote {args.out} ({camera.width}x{camera.height}, "
          f"{model.n} gaussians)")
    return 0


def cmd_eval(args) -> int:
    bundle = load_bundle(args.checkpoint)
    dataset, _ = _resolve_scene(args)
    ratios = [float(part) for part in args.ratios.split(",") if part.strip()]
    rows = eval_ratios(bundle, dataset, ratios)
    with open(args.out, "w", newline="") as sink:
        writer = csv.writer(sink)
        writer.writerow(["ratio", "psnr", "ssim"])
        for row in rows:
            writer.writerow([row["ratio"], row["psnr"], row["ssim"]])
    print(f"wrote {args.out} ({len(rows)} ratios)")
    return 0


def cmd_serve(args) -> int:
    from .serve import run_server

    bundle = load_bundle(args.checkpoint)
    server = run_server(bundle, host=args.host, port=args.port)
    host, port = server.server_address[:2]
    print(f"serving {args.checkpoint} on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elastisplat",
        description="Train once, render at any keep-ratio.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_train = subs.add_parser("train", help="fit a scene and write a checkpoint")
    p_train.add_argument("--config", default=None, metavar="JSON",
                         help="config file; flags below override its keys")
    p_train.add_argument("--out", required=True, metavar="CKPT")
    p_train.add_argument("--log", default=None, metavar="JSONL",
                         help="metrics log path (default: <out>.metrics.jsonl)")
    p_train.add_argument("--init", default=None, metavar="PLY",
                         help="initial gaussians (default: seeded random cloud)")
    p_train.add_argument("--init-points", default=1000, type=int, metavar="N")
    p_train.add_argument("--resume", default=None, metavar="CKPT",
                         help="continue this checkpoint under its stored config")
    p_train.add_argument("--stop-after", default=None, type=int, metavar="IT",
                         help="pause stage 2 at this iteration for later resume")
    p_train.add_argument("--save-dataset", default=None, metavar="DIR",
                         help="also write the training scene to this directory")
    _add_scene_flags(p_train)
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_compress = subs.add_parser("compress",
                                 help="write the top floor(e*N) gaussians")
    p_compress.add_argument("checkpoint")
    p_compress.add_argument("--ratio", required=True, type=float)
    p_compress.add_argument("--out", required=True, metavar="PLY")
    p_compress.set_defaults(func=cmd_compress)

    p_render = subs.add_parser("render", help="render one view to an image")
    p_render.add_argument("model", help="checkpoint or point-list file")
    p_render.add_argument("--camera", required=True, metavar="JSON")
    p_render.add_argument("--view", default=0, type=int,
                          help="index into the camera file")
    p_render.add_argument("--ratio", default=1.0, type=float)
    p_render.add_argument("--background", default=None, metavar="R,G,B")
    p_render.add_argument("--out", required=True, metavar="PNG")
    p_render.set_defaults(func=cmd_render)

    p_eval = subs.add_parser("eval", help="PSNR/SSIM table across ratios")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--ratios", required=True, metavar="E1,E2,...")
    p_eval.add_argument("--out", required=True, metavar="CSV")
    _add_scene_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_serve = subs.add_parser("serve", help="HTTP frame service for a checkpoint")
    p_serve.add_argument("checkpoint")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", default=8000, type=int)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ElastisplatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command line surface.

Subcommands:
    make-scene  render a preset scene into a dataset directory
    train       optimize a field on a dataset
    render      render dataset views from a checkpoint
    eval        PSNR/SSIM/AVGE between two image directories
    mask-audit  consistency mask vs occlusion oracle, per-ray CSV
    ablate      train the loss-toggle arms and tabulate heldout metrics
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import audit as audit_mod
from .configs import load_train_config
from .consistency import MaskConfig
from .datasets import load_dataset, save_dataset
from .errors import SphereNerfError
from .field import FieldModel, load_checkpoint
from .images import read_ppm, write_png, write_ppm
from .metrics import evaluate_images
from .renderer import render_image
from .scenes import PRESETS, make_dataset
from .trainer import ABLATION_ARMS, ablation_run, evaluate_model, train


def _cmd_make_scene(args) -> int:
    if args.preset not in PRESETS:
        print(f"error: unknown preset {args.preset!r}; choose from {sorted(PRESETS)}",
              file=sys.stderr)
        return 2
    scene, rig = PRESETS[args.preset]()
    bundle = make_dataset(scene, args.train_views, args.heldout_views, rig, args.seed)
    manifest = save_dataset(bundle, args.out)
    print(f"wrote {len(bundle.images)} views to {manifest.parent}")
    return 0


def _cmd_train(args) -> int:
    cfg, dataset_path = load_train_config(args.config)
    if args.dataset:
        dataset_path = args.dataset
    if not dataset_path:
        print("error: no dataset given (config 'dataset' key or --dataset)", file=sys.stderr)
        return 2
    dataset = load_dataset(dataset_path)
    model = FieldModel.initialize(cfg.seed)
    train(model, dataset, cfg, out_dir=args.out)
    if dataset.indices("heldout"):
        scores, _ = evaluate_model(model, dataset, cfg.n_samples)
        print(json.dumps(scores))
    return 0


def _cmd_render(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    white = dataset.background == "white"
    indices = dataset.indices(args.split) if args.split else range(len(dataset.cameras))
    for i in indices:
        rgb, _ = render_image(model, dataset.cameras[i], args.n,
                              dataset.t_near, dataset.t_far, white_background=white)
        name = f"render_{i:03d}"
        write_ppm(out / f"{name}.ppm", rgb)
        if args.png:
            write_png(out / f"{name}.png", rgb)
    print(f"rendered {len(list(indices))} views to {out}")
    return 0


def _cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    pred_files = sorted(pred_dir.glob("*.ppm"))
    gt_files = sorted(gt_dir.glob("*.ppm"))
    if not pred_files or len(pred_files) != len(gt_files):
        print(f"error: {len(pred_files)} predicted vs {len(gt_files)} reference images",
              file=sys.stderr)
        return 2
    preds = [read_ppm(p) for p in pred_files]
    refs = [read_ppm(p) for p in gt_files]
    report = evaluate_images(preds, refs, [p.name for p in pred_files])
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _cmd_mask_audit(args) -> int:
    if args.preset not in PRESETS:
        print(f"error: unknown preset {args.preset!r}; choose from {sorted(PRESETS)}",
              file=sys.stderr)
        return 2
    scene, rig = PRESETS[args.preset]()
    cfg = MaskConfig(epsilon=args.epsilon, mask_source=args.mask_source)
    field = load_checkpoint(args.checkpoint).query() if args.checkpoint else None
    result = audit_mod.run_mask_audit(
        scene, rig, args.rays, cfg, seed=args.seed, n_samples=args.n,
        sharpness=args.sharpness, field=field,
    )
    audit_mod.write_audit_csv(result, args.out)
    print(json.dumps(result.summary()))
    return 0


def _cmd_ablate(args) -> int:
    cfg, dataset_path = load_train_config(args.config)
    if args.dataset:
        dataset_path = args.dataset
    if not dataset_path:
        print("error: no dataset given (config 'dataset' key or --dataset)", file=sys.stderr)
        return 2
    dataset = load_dataset(dataset_path)
    arms = args.arms.split(",") if args.arms else list(ABLATION_ARMS)
    rows = ablation_run(dataset, cfg, arms)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.json", "w") as f:
        json.dump(rows, f, indent=2)
    for row in rows:
        print(f"{row['arm']:>8s}  psnr {row['psnr']:6.2f}  ssim {row['ssim']:.4f}"
              f"  avge {row['avge']:.4f}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spherenerf")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("make-scene", help="render a preset into a dataset directory")
    p.add_argument("--preset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-views", type=int, default=4)
    p.add_argument("--heldout-views", type=int, default=8)
    p.set_defaults(fn=_cmd_make_scene)

    p = sub.add_parser("train", help="train a field on a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("render", help="render dataset views from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None, choices=[None, "train", "heldout"])
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--png", action="store_true")
    p.set_defaults(fn=_cmd_render)

    p = sub.add_parser("eval", help="compare two directories of PPM images")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("mask-audit", help="mask vs occlusion oracle, CSV per ray")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", default="occluder")
    p.add_argument("--rays", type=int, default=10000)
    p.add_argument("--epsilon", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--sharpness", type=float, default=500.0)
    p.add_argument("--mask-source", default="argmax",
                   choices=["argmax", "rendered_depth"])
    p.add_argument("--checkpoint", default=None,
                   help="audit a trained field instead of the density bypass")
    p.set_defaults(fn=_cmd_mask_audit)

    p = sub.add_parser("ablate", help="train loss-toggle arms and tabulate metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--arms", default=None,
                   help=f"comma-separated subset of {sorted(ABLATION_ARMS)}")
    p.set_defaults(fn=_cmd_ablate)
    return parser


def cli_dispatch(argv) -> int:
    """Run one subcommand; returns a process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse errors (unknown command, bad flags)
        return int(exc.code or 0)
    if not getattr(args, "fn", None):
        parser.print_help()
        return 2
    try:
        return args.fn(args)
    except SphereNerfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    np.seterr(all="ignore")
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""Command-line front end for the compression and interpolation pipeline.

Exit codes: 0 on success (including ``--help``), 1 for usage errors
(unknown flags or subcommands, bad flag values, malformed config), and
2 for runtime failures (missing files, incompatible checkpoints,
training errors).
"""

from __future__ import annotations

import argparse
import sys

from sgfi import pipeline
from sgfi.checkpoint import load_checkpoint
from sgfi.config import ConfigError, load_pipeline_config
from sgfi.data import load_dataset


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None,
                        help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the run seed")
    parser.add_argument("--out-dir", default=None,
                        help="directory for generated artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgfi",
        description="Sparsity-guided compression and frame interpolation "
                    "on a toy synthetic-video corpus.")
    _add_common(parser)
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")

    p = sub.add_parser("gen-data", help="render seeded train/val triplets")
    _add_common(p)
    p.add_argument("--count", type=int, default=None,
                   help="training triplets to render")
    p.add_argument("--val-count", type=int, default=None,
                   help="validation triplets to render")
    p.add_argument("--size", type=int, default=None,
                   help="square frame size in pixels")
    p.add_argument("--max-shapes", type=int, default=None,
                   help="maximum moving shapes per scene")

    p = sub.add_parser("train", help="train a dense baseline interpolator")
    _add_common(p)
    p.add_argument("--data", default=None, help="training dataset directory")
    p.add_argument("--val", default=None, help="validation dataset directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", default=None, help="checkpoint to write")

    p = sub.add_parser("sparsify",
                       help="continue a baseline with l1-sparsified training")
    _add_common(p)
    p.add_argument("--ckpt", default=None, help="baseline checkpoint")
    p.add_argument("--data", default=None, help="training dataset directory")
    p.add_argument("--val", default=None, help="validation dataset directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--l1", type=float, default=None,
                   help="l1 penalty weight")
    p.add_argument("--lr", type=float, default=None,
                   help="sparsified-training learning rate")
    p.add_argument("--subset", type=int, default=None,
                   help="train on only the first N triplets (0 = all)")
    p.add_argument("--out", default=None, help="sparse checkpoint to write")
    p.add_argument("--csv", default=None, help="density trajectory CSV")

    p = sub.add_parser("profile",
                       help="measure per-layer density of a checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", default=None, help="sparse checkpoint")
    p.add_argument("--out", default=None, help="density profile JSON")

    p = sub.add_parser("reconstruct",
                       help="derive the compact architecture from a sparse "
                            "checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", default=None, help="sparse checkpoint")
    p.add_argument("--strategy", choices=("min", "max"), default=None,
                   help="channel unification strategy")
    p.add_argument("--out", default=None, help="compact architecture JSON")

    p = sub.add_parser("retrain",
                       help="train a fresh model on a compact architecture")
    _add_common(p)
    p.add_argument("--spec", default=None, help="compact architecture JSON")
    p.add_argument("--data", default=None, help="training dataset directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", default=None, help="checkpoint to write")

    p = sub.add_parser("enhance",
                       help="grow and train pyramid/grid/path-selection "
                            "heads on a compact model")
    _add_common(p)
    p.add_argument("--ckpt", default=None, help="compact checkpoint")
    p.add_argument("--data", default=None, help="training dataset directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", default=None, help="checkpoint to write")

    p = sub.add_parser("interpolate",
                       help="synthesize the midpoint frame of a pair")
    _add_common(p)
    p.add_argument("--in0", required=True, help="first input frame (PPM)")
    p.add_argument("--in1", required=True, help="second input frame (PPM)")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--out", required=True, help="output frame (PPM)")

    p = sub.add_parser("eval",
                       help="score a checkpoint on a dataset")
    _add_common(p)
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--report", default=None, help="JSON report to write")

    p = sub.add_parser("gradcheck",
                       help="finite-difference audit of every gradient path")
    _add_common(p)

    return parser


def _collect_config(args: argparse.Namespace,
                    flag_keys: dict[str, str]):
    """Defaults -> config file -> explicit CLI flags."""
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    for attr, key in flag_keys.items():
        value = getattr(args, attr)
        if value is not None:
            overrides[key] = str(value)
    return load_pipeline_config(args.config, overrides)


def _cmd_gen_data(args) -> int:
    cfg = _collect_config(args, {"count": "train_count",
                                 "val_count": "val_count",
                                 "size": "frame_size",
                                 "max_shapes": "max_shapes"})
    train_dir, val_dir = pipeline.generate_datasets(cfg)
    print(f"wrote {cfg.train_count} training triplets to {train_dir}")
    print(f"wrote {cfg.val_count} validation triplets to {val_dir}")
    return 0


def _cmd_train(args) -> int:
    cfg = _collect_config(args, {"data": "data_dir", "val": "val_dir",
                                 "epochs": "epochs"})
    path = pipeline.train_baseline(cfg, args.out)
    print(f"wrote baseline checkpoint to {path}")
    return 0


def _cmd_sparsify(args) -> int:
    cfg = _collect_config(args, {"data": "data_dir", "val": "val_dir",
                                 "epochs": "sparsify_epochs",
                                 "l1": "l1_weight", "lr": "sparsify_lr",
                                 "subset": "sparsify_subset"})
    ckpt = args.ckpt or f"{cfg.out_dir}/baseline.sgfi"
    path, trajectory = pipeline.sparsify_checkpoint(cfg, ckpt, args.out,
                                                    args.csv)
    final = trajectory.records[-1].density if trajectory.records else 1.0
    print(f"wrote sparse checkpoint to {path} (density {final:.4f})")
    return 0


def _cmd_profile(args) -> int:
    cfg = _collect_config(args, {})
    ckpt = args.ckpt or f"{cfg.out_dir}/sparse.sgfi"
    out = args.out or f"{cfg.out_dir}/profile.json"
    profile = pipeline.profile_checkpoint(ckpt, out)
    print(f"wrote density profile to {out} "
          f"(global density {profile.global_density:.4f})")
    return 0


def _cmd_reconstruct(args) -> int:
    cfg = _collect_config(args, {"strategy": "unify"})
    ckpt = args.ckpt or f"{cfg.out_dir}/sparse.sgfi"
    out = args.out or f"{cfg.out_dir}/compact_spec.json"
    compact = pipeline.reconstruct_checkpoint(ckpt, cfg.unify, out)
    print(f"wrote compact architecture to {out} "
          f"({compact.param_count()} weights)")
    return 0


def _cmd_retrain(args) -> int:
    cfg = _collect_config(args, {"data": "data_dir",
                                 "epochs": "retrain_epochs"})
    spec = args.spec or f"{cfg.out_dir}/compact_spec.json"
    path = pipeline.retrain_compact(cfg, spec, args.out)
    print(f"wrote compact checkpoint to {path}")
    return 0


def _cmd_enhance(args) -> int:
    cfg = _collect_config(args, {"data": "data_dir",
                                 "epochs": "enhance_epochs"})
    ckpt = args.ckpt or f"{cfg.out_dir}/compact.sgfi"
    path = pipeline.enhance_checkpoint(cfg, ckpt, args.out)
    print(f"wrote enhanced checkpoint to {path}")
    return 0


def _cmd_interpolate(args) -> int:
    _collect_config(args, {})
    path = pipeline.interpolate_pair(args.ckpt, args.in0, args.in1, args.out)
    print(f"wrote interpolated frame to {path}")
    return 0


def _cmd_eval(args) -> int:
    _collect_config(args, {})
    report = pipeline.evaluate_checkpoint(load_checkpoint(args.ckpt),
                                          load_dataset(args.data))
    if args.report:
        report.save(args.report)
    print(f"psnr {report.mean_psnr:.3f} dB  ssim {report.mean_ssim:.4f}  "
          f"weights {report.param_count}  "
          f"{report.seconds_per_frame * 1000.0:.1f} ms/frame")
    return 0


def _cmd_gradcheck(args) -> int:
    cfg = _collect_config(args, {})
    report = pipeline.gradient_audit(cfg.seed)
    worst = max(report.values())
    for name, err in sorted(report.items()):
        print(f"{name}: {err:.3e}")
    if worst >= 1e-4:
        print(f"FAIL: worst relative error {worst:.3e} >= 1e-4")
        return 2
    print(f"ok: worst relative error {worst:.3e}")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "sparsify": _cmd_sparsify,
    "profile": _cmd_profile,
    "reconstruct": _cmd_reconstruct,
    "retrain": _cmd_retrain,
    "enhance": _cmd_enhance,
    "interpolate": _cmd_interpolate,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage problems; fold the
        # latter onto this tool's usage exit code.
        return 0 if exc.code == 0 else 1
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"sgfi: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"sgfi: error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

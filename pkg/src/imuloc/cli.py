"""Command-line entry point: gen, train, eval, export-heatmaps.

Exit codes: 0 success, 2 configuration problem, 3 data problem,
4 checkpoint/dataset incompatibility.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig
from .errors import CompatibilityError, ConfigError, DataError, ImulocError
from . import pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_COMPAT = 4


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    manifest = pipeline.generate_dataset(cfg, Path(args.out), force=args.force)
    print(f"wrote {len(manifest['scenes'])} scenes / "
          f"{len(manifest['trajectories'])} trajectories to {args.out}")
    print(f"config hash: {manifest['config_hash']}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    ds = pipeline.Dataset.load(args.data)
    out = Path(args.out)
    if args.stage == "1":
        ckpt = pipeline.run_train_stage1(ds, out, steps=args.steps)
        print(f"stage-1 checkpoint -> {out} (final loss {ckpt.final_loss:.4f})")
    elif args.stage == "2":
        if not args.stage1_ckpt:
            raise ConfigError("training stage 2 requires --stage1-ckpt")
        ckpt = pipeline.run_train_stage2(
            ds, Path(args.stage1_ckpt), out, steps=args.steps,
            action_loss=False if args.no_action_loss else None,
            temporal=False if args.no_temporal else None,
            spatial=False if args.no_spatial else None)
        print(f"stage-2 checkpoint -> {out} (final loss {ckpt.final_loss:.4f})")
    else:
        net = pipeline.run_train_velocity(ds, out, steps=args.steps)
        print(f"velocity checkpoint -> {out} ({net.param_count()} parameters)")
    print(f"config hash: {ds.hash}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    ds = pipeline.Dataset.load(args.data)
    heatmap_dir = Path(args.heatmap_dir) if args.heatmaps else None
    report = pipeline.run_eval(
        ds, Path(args.stage1), Path(args.stage2), Path(args.velocity),
        Path(args.out),
        drift_csv_path=Path(args.drift_csv) if args.drift_csv else None,
        heatmap_dir=heatmap_dir, heatmap_format=args.heatmap_format)
    for split, doc in report["splits"].items():
        s2 = doc["stage2"]["success"]
        print(f"[{split}] stage2 success: " +
              " ".join(f"@{k}m={v:.3f}" for k, v in sorted(s2.items())))
    print(f"report -> {args.out}")
    return EXIT_OK


def cmd_export_heatmaps(args: argparse.Namespace) -> int:
    ds = pipeline.Dataset.load(args.data)
    imu_enc, point_enc, _ = pipeline.load_stage1(ds, Path(args.stage1))
    from . import dataio
    from .inference import infer, verify_frozen
    reasoner, header = dataio.load_stage2_checkpoint(Path(args.stage2))
    if header["dataset_hash"] != ds.hash:
        raise CompatibilityError("stage-2 checkpoint belongs to a different dataset")
    verify_frozen(header, imu_enc, point_enc)
    rec = next((t for t in ds.manifest["trajectories"] if t["id"] == args.traj), None)
    if rec is None:
        raise DataError(f"trajectory {args.traj!r} not found in dataset")
    _, cloud = ds.scene(rec["scene"])
    result = infer(ds.windows(rec), cloud, imu_enc, point_enc, reasoner,
                   ds.config.world.patch_points, ds.config.world.patch_side_m,
                   ds.scene_seed(rec["scene"]))
    pipeline._export_heatmaps(result, rec["id"], ds.config.world.grid_cells,
                              Path(args.out), args.heatmap_format)
    pipeline.export_predictions(result, Path(args.out) / f"{rec['id']}.predictions.csv")
    print(f"heatmaps for {rec['id']} -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imuloc",
        description="Synthetic action-aware inertial localization lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    p_gen.add_argument("--config", help="JSON config; defaults are the desk profile")
    p_gen.add_argument("--seed", type=int, help="override config seed")
    p_gen.add_argument("--out", required=True, help="output dataset directory")
    p_gen.add_argument("--force", action="store_true",
                       help="overwrite a non-empty output directory")
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train one pipeline stage")
    p_train.add_argument("--stage", choices=("1", "2", "velocity"), required=True)
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--steps", type=int, help="override training steps")
    p_train.add_argument("--stage1-ckpt", help="stage-1 checkpoint (stage 2 only)")
    p_train.add_argument("--no-action-loss", action="store_true",
                         help="ablation: drop the action supervision term")
    p_train.add_argument("--no-temporal", action="store_true",
                         help="ablation: bypass the temporal reasoning module")
    p_train.add_argument("--no-spatial", action="store_true",
                         help="ablation: bypass the spatial reasoning module")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate all methods on the test splits")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--stage1", required=True, help="stage-1 checkpoint")
    p_eval.add_argument("--stage2", required=True, help="stage-2 checkpoint")
    p_eval.add_argument("--velocity", required=True, help="velocity checkpoint")
    p_eval.add_argument("--out", required=True, help="report JSON path")
    p_eval.add_argument("--drift-csv", help="also export the drift curves as CSV")
    p_eval.add_argument("--heatmaps", action="store_true",
                        help="export per-second heatmaps")
    p_eval.add_argument("--heatmap-dir", default="heatmaps")
    p_eval.add_argument("--heatmap-format", choices=("csv", "pgm"), default="csv")
    p_eval.set_defaults(func=cmd_eval)

    p_exp = sub.add_parser("export-heatmaps",
                           help="export heatmaps for a single trajectory")
    p_exp.add_argument("--data", required=True)
    p_exp.add_argument("--stage1", required=True)
    p_exp.add_argument("--stage2", required=True)
    p_exp.add_argument("--traj", required=True, help="trajectory id, e.g. traj_0003")
    p_exp.add_argument("--out", required=True, help="output directory")
    p_exp.add_argument("--heatmap-format", choices=("csv", "pgm"), default="csv")
    p_exp.set_defaults(func=cmd_export_heatmaps)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CompatibilityError as exc:
        print(f"compatibility error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except (DataError, ImulocError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

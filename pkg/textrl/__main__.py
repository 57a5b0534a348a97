"""
CLI entry point: run with `textrl` or `python -m textrl`.

Subcommands: train, evaluate, detect, gendata, status, version.

Exit codes: 0 ok, 2 config error, 3 data error (malformed or missing
input), 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .types import CheckpointError, ConfigError, DatasetError

logger = logging.getLogger("textrl.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _setup_logging(args):
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _flag_overrides(args) -> dict:
    """Dedicated train flags as a nested override dict (highest precedence)."""
    from .config import merge_dicts, parse_overrides

    flat = {
        "mode": args.mode,
        "labeled_manifest": args.labeled,
        "unlabeled_manifest": args.unlabeled,
        "eval_manifest": args.eval_dataset,
        "total_env_steps": args.steps,
        "checkpoint_dir": args.checkpoint_dir,
        "seed": args.seed,
        "num_threads": args.threads,
        "device": args.device,
    }
    overrides: dict = {k: v for k, v in flat.items() if v is not None}
    assessor = {
        "checkpoint": args.assessor_checkpoint,
        "crop_manifest": args.crop_manifest,
    }
    assessor = {k: v for k, v in assessor.items() if v is not None}
    if assessor:
        overrides["assessor"] = assessor
    return merge_dicts(parse_overrides(args.set or []), overrides)


def cmd_train(args):
    """Train an agent; writes config.json, checkpoints and metrics.jsonl."""
    from .config import load_run_config
    from .datasets import convert_icdar
    from .exporters import ConsoleExporter
    from .training import Trainer

    overrides = _flag_overrides(args)
    if args.icdar_images or args.icdar_gt:
        if not (args.icdar_images and args.icdar_gt):
            raise ConfigError("--icdar-images and --icdar-gt go together")
        cfg = load_run_config(args.config, args.profile, overrides, validate=False)
        manifest = convert_icdar(
            args.icdar_images, args.icdar_gt, Path(cfg.checkpoint_dir) / "icdar_manifest.jsonl"
        )
        key = "labeled_manifest" if cfg.mode == "supervised" else "unlabeled_manifest"
        overrides[key] = str(manifest)

    cfg = load_run_config(args.config, args.profile, overrides)

    exporters = []
    if args.progress:
        exporters.append(ConsoleExporter(every=args.progress))
    if args.prometheus_port:
        from .prometheus import PrometheusExporter

        exporters.append(PrometheusExporter(
            port=args.prometheus_port, run_id=f"{cfg.mode}-seed{cfg.seed}",
        ))

    result = Trainer(cfg, exporters=exporters).run()
    print(f"checkpoint: {result.checkpoint}")
    print(f"metrics:    {result.metrics_log}")
    print(f"steps:      {result.global_step} ({result.episodes} episodes)")
    if result.last_eval is not None:
        print(f"last eval:  F={result.last_eval.f1:.4f} at step {result.last_eval.global_step}")
    if result.best_checkpoint is not None:
        print(f"best:       {result.best_checkpoint}")
    return EXIT_OK


def _eval_dataset(args, out_dir: Path):
    from .datasets import convert_icdar, load_manifest

    if args.icdar_images or args.icdar_gt:
        if not (args.icdar_images and args.icdar_gt):
            raise ConfigError("--icdar-images and --icdar-gt go together")
        manifest = convert_icdar(args.icdar_images, args.icdar_gt, out_dir / "icdar_manifest.jsonl")
        return load_manifest(manifest)
    if not args.dataset:
        raise ConfigError("evaluate needs --dataset or --icdar-images/--icdar-gt")
    return load_manifest(args.dataset)


def cmd_evaluate(args):
    """Score a checkpoint (or the scripted oracle) on a labeled dataset."""
    from .agent import DQNAgent
    from .assessor import Assessor
    from .config import EnvConfig, EvalConfig
    from .evaluation import AgentPolicy, ScriptedOraclePolicy, evaluate

    if not args.checkpoint and not args.oracle:
        raise ConfigError("evaluate needs --checkpoint (or --oracle)")

    if args.oracle:
        policy, env_cfg, checkpoint_id = ScriptedOraclePolicy(), EnvConfig(), "oracle"
        default_out = Path("eval_oracle")
    else:
        agent = DQNAgent.load(args.checkpoint, device=args.device)
        policy, env_cfg = AgentPolicy(agent.q_network), agent.env_cfg
        checkpoint_id = args.checkpoint
        default_out = Path(args.checkpoint).parent / "eval"

    out_dir = Path(args.out) if args.out else default_out
    dataset = _eval_dataset(args, out_dir)
    assessor = (
        Assessor.load(args.assessor_checkpoint, device=args.device)
        if args.assessor_checkpoint else None
    )

    report = evaluate(
        policy,
        dataset,
        env_cfg,
        EvalConfig(iou_threshold=args.iou_threshold),
        assessor=assessor,
        annotate_dir=args.annotate_out,
        checkpoint_id=checkpoint_id,
        max_images=args.max_images,
    )
    json_path, txt_path = report.write(out_dir)
    print(report.to_table(), end="")
    print(f"\nreport: {json_path} {txt_path}")
    return EXIT_OK


def cmd_detect(args):
    """Print detections for each image as one JSON line, in input order."""
    from . import TextDetector
    from .imaging import load_rgb, save_png

    detector = TextDetector.from_checkpoint(args.checkpoint, device=args.device)
    for name in args.images:
        path = Path(name)
        if not path.exists():
            raise DatasetError(f"image not found: {path}")
        image = load_rgb(path)
        boxes = detector.detect(image)
        record = {"image": str(path), "boxes": [b.to_list() for b in boxes]}
        if not args.no_annotate:
            out = path.with_name(f"{path.stem}_detections.png")
            save_png(detector.annotate(image, boxes), out)
            record["annotated"] = str(out)
        print(json.dumps(record))
    return EXIT_OK


def cmd_gendata(args):
    """Generate assessor crops or whole detection scenes."""
    from .config import read_config_file
    from .synthgen import GenConfig, generate_dataset, generate_scenes
    from .types import Supervision

    values = read_config_file(args.config) if args.config else {}
    flags = {
        "seed": args.seed,
        "background_dir": args.background_dir,
        "fonts": args.font,
        "width": args.width,
        "height": args.height,
        "crop_size": args.crop_size,
        "workers": args.workers,
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    try:
        gen_cfg = GenConfig.from_dict(values)
    except TypeError as e:
        raise ConfigError(f"bad gendata config: {e}")

    if args.scenes:
        supervision = Supervision.UNLABELED if args.unlabeled else Supervision.LABELED
        manifest = generate_scenes(gen_cfg, args.n, args.out, supervision=supervision)
    else:
        manifest = generate_dataset(gen_cfg, args.n, args.out)
    print(f"manifest: {manifest}")
    return EXIT_OK


def cmd_status(args):
    """Show a training snapshot from a metrics log."""
    from .metrics import MetricsEngine
    from .tracker import RunTracker

    path = Path(args.file)
    if not path.exists():
        raise DatasetError(f"metrics log not found: {path}")
    tracker = RunTracker(run_id=path.parent.name, max_history=sys.maxsize)
    tracker.load_from_disk(path)
    episodes, evals = tracker.episodes(), tracker.evals
    if not episodes and not evals:
        print("No records found.")
        return EXIT_OK

    engine = MetricsEngine()
    snap = (engine.compute_window(episodes, args.last, evals=evals) if args.last
            else engine.compute(episodes, evals=evals))

    print("=== textrl status ===")
    print(f"File:          {path}")
    print(f"Episodes:      {snap.episodes}")
    print(f"Global step:   {snap.last_global_step}")
    print(f"Mean reward:   {snap.mean_reward:+.3f}")
    print(f"Mean steps:    {snap.mean_steps:.1f}")
    if snap.mean_quality is not None:
        print(f"Mean quality:  {snap.mean_quality:.3f}")
    print(f"Truncated:     {snap.truncation_rate:.1%}")
    if snap.mean_loss is not None:
        print(f"Mean TD loss:  {snap.mean_loss:.5f}")
    if snap.mean_assessor_loss is not None:
        print(f"Assessor loss: {snap.mean_assessor_loss:.5f}")
    if snap.last_epsilon is not None:
        print(f"Epsilon:       {snap.last_epsilon:.3f}")

    if len(snap.by_source) > 1:
        print("\n--- By reward source ---")
        for source, stats in snap.by_source.items():
            print(f"  {source:12s} {stats.episodes:8d} episodes  reward {stats.mean_reward:+.3f}")

    if snap.last_eval is not None:
        e = snap.last_eval
        print(f"\nLast eval (step {e.global_step}): "
              f"P={e.precision:.3f} R={e.recall:.3f} F={e.f1:.3f}")
    return EXIT_OK


def cmd_version(args):
    from . import __version__
    print(f"textrl {__version__}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textrl",
        description="Scene-text detection with a box-transforming RL agent",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="Warnings only")
    sub = parser.add_subparsers(dest="command")

    # train
    p_train = sub.add_parser("train", help="Train an agent (supervised, weak or semi)")
    p_train.add_argument("--config", help="JSON run config")
    p_train.add_argument("--profile", choices=["full", "desk"], help="Preset scale")
    p_train.add_argument("--mode", choices=["supervised", "weak", "semi"])
    p_train.add_argument("--labeled", "--dataset", dest="labeled", help="Labeled manifest")
    p_train.add_argument("--unlabeled", help="Unlabeled manifest")
    p_train.add_argument("--eval-dataset", help="Manifest for periodic evaluation")
    p_train.add_argument("--icdar-images", help="ICDAR image directory to convert")
    p_train.add_argument("--icdar-gt", help="ICDAR ground-truth directory to convert")
    p_train.add_argument("--assessor-checkpoint", help="Reuse a trained assessor")
    p_train.add_argument("--crop-manifest", help="Assessor crop manifest for online training")
    p_train.add_argument("--steps", type=int, help="Total environment steps")
    p_train.add_argument("--checkpoint-dir", help="Run output directory")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--threads", type=int, help="Torch threads (1 = reproducible)")
    p_train.add_argument("--device", help="cpu, cuda or auto")
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="Override any config key, e.g. agent.lr=3e-4")
    p_train.add_argument("--progress", type=int, default=0, metavar="N",
                         help="Print every Nth episode")
    p_train.add_argument("--prometheus-port", type=int, help="Serve live gauges on this port")
    p_train.set_defaults(func=cmd_train)

    # evaluate
    p_eval = sub.add_parser("evaluate", help="Score a checkpoint on a labeled dataset")
    p_eval.add_argument("--checkpoint", help="Agent checkpoint")
    p_eval.add_argument("--oracle", action="store_true",
                        help="Score the scripted ground-truth policy instead")
    p_eval.add_argument("--dataset", help="Canonical manifest")
    p_eval.add_argument("--icdar-images", help="ICDAR image directory to convert")
    p_eval.add_argument("--icdar-gt", help="ICDAR ground-truth directory to convert")
    p_eval.add_argument("--iou-threshold", type=float, default=0.5)
    p_eval.add_argument("--max-images", type=int)
    p_eval.add_argument("--assessor-checkpoint", help="Also report mean assessor score")
    p_eval.add_argument("--out", help="Report directory")
    p_eval.add_argument("--annotate-out", help="Write annotated PNGs here")
    p_eval.add_argument("--device", default="cpu")
    p_eval.set_defaults(func=cmd_evaluate)

    # detect
    p_det = sub.add_parser("detect", help="Detect words in images")
    p_det.add_argument("--checkpoint", required=True)
    p_det.add_argument("images", nargs="+")
    p_det.add_argument("--no-annotate", action="store_true")
    p_det.add_argument("--device", default="cpu")
    p_det.set_defaults(func=cmd_detect)

    # gendata
    p_gen = sub.add_parser("gendata", help="Generate synthetic data")
    kind = p_gen.add_mutually_exclusive_group(required=True)
    kind.add_argument("--assessor", action="store_true", help="Labeled RGBA crops")
    kind.add_argument("--scenes", action="store_true", help="Detection scenes")
    p_gen.add_argument("-n", type=int, required=True, help="Samples or scenes")
    p_gen.add_argument("-o", "--out", required=True)
    p_gen.add_argument("--seed", type=int)
    p_gen.add_argument("--config", help="JSON GenConfig")
    p_gen.add_argument("--background-dir")
    p_gen.add_argument("--font", action="append", help="TrueType font path (repeatable)")
    p_gen.add_argument("--width", type=int)
    p_gen.add_argument("--height", type=int)
    p_gen.add_argument("--crop-size", type=int)
    p_gen.add_argument("--workers", type=int)
    p_gen.add_argument("--unlabeled", action="store_true",
                       help="Tag scenes unlabeled (no boxes in the manifest)")
    p_gen.set_defaults(func=cmd_gendata)

    # status
    p_status = sub.add_parser("status", help="Summarize a metrics log")
    p_status.add_argument("file", help="Path to metrics.jsonl")
    p_status.add_argument("--last", type=int, default=0, help="Only the last N episodes")
    p_status.set_defaults(func=cmd_status)

    # version
    p_ver = sub.add_parser("version", help="Show version")
    p_ver.set_defaults(func=cmd_version)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_OK
    _setup_logging(args)

    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_DATA if e.missing else EXIT_RUNTIME
    except (DatasetError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:
        logger.debug("unhandled error", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

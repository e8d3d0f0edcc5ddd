"""``acnet`` command line: synth, train, eval, viz, gradcheck and ablate subcommands."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .core.checkpoint import CheckpointError, load_checkpoint
from .core.network import SegmentationModel, build_model
from .core.verification import SCOPES, run_verification
from .data.dataset import SegmentationDataset
from .data.sample import CLASS_NAMES, SegmentationSample
from .data.synth import SynthGenerator
from .data.visualize import export_gate_heatmap, export_overlay, gate_filename
from .tensor.tensor import Tensor
from .training.evaluator import Evaluator, pad_to_multiple, resolve_threads
from .training.ablation import run_ladder
from .training.trainer import Trainer
from .utils.config import (
    MS_SCALES,
    MULTIGRID_DILATIONS,
    SCALE_AUG_RANGE,
    ConfigurationError,
    RunConfig,
    dump_config,
    load_run_config,
    parse_value,
)
from .utils.logger import add_file_handler, setup_logger
from .utils.rng import RngStreams

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_VERIFICATION = 3

EFFECTIVE_CONFIG = "effective_config.yaml"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="acnet", description="Adaptive context network experiments")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", type=Path, help="YAML or 'section.key = value' config file")
        sub.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                         help="Override one config value, e.g. optim.base_lr=0.01")
        sub.add_argument("--out", type=Path, help="Output directory (overrides output_dir)")
        sub.add_argument("--seed", type=int, help="Top-level seed")

    synth = commands.add_parser("synth", help="Generate a synthetic dataset")
    common(synth)
    synth.add_argument("--count", type=int, help="Number of samples (default data.train_count)")

    train = commands.add_parser("train", help="Train a model")
    common(train)
    train.add_argument("--model", choices=["acnet", "fcn"])
    train.add_argument("--gcm-only", action="store_true", help="Single GCM at 1/16, no decoder")
    train.add_argument("--lcm-reuse", type=int, metavar="N", help="Fusion repetitions per LCM")
    train.add_argument("--delta", type=float, help="Global gate smoothing amplitude")
    train.add_argument("--acb", type=int, choices=[1, 2, 3], help="Number of context blocks")
    train.add_argument("--ohem", action="store_true", help="Online hard example mining")
    train.add_argument("--multigrid", action="store_true", help="Dilations (4, 8, 16) in the last stage")
    train.add_argument("--scale-aug", action="store_true", help="Random scaling in [0.5, 2.2]")

    evaluate = commands.add_parser("eval", help="Evaluate a checkpoint")
    common(evaluate)
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--ms", action="store_true", help="Multi-scale testing")
    evaluate.add_argument("--mirror", action="store_true", help="Average mirrored inputs")

    viz = commands.add_parser("viz", help="Export gate heatmaps and prediction overlays")
    common(viz)
    viz.add_argument("--checkpoint", type=Path, help="Checkpoint directory (random init if omitted)")
    viz.add_argument("--samples", type=int, default=1)
    viz.add_argument("--view-size", type=int, nargs=2, metavar=("H", "W"),
                     help="Also write heatmaps nearest-upsampled to H x W")

    gradcheck = commands.add_parser("gradcheck", help="Finite-difference gradient verification")
    common(gradcheck)
    gradcheck.add_argument("--scope", choices=SCOPES, default="op")

    ablate = commands.add_parser("ablate", help="Train the component ablation ladder and check its ordering")
    common(ablate)
    ablate.add_argument("--min-gap", type=float, default=0.01, help="Required mIoU rise between rungs")
    ablate.add_argument("--record-only", action="store_true", help="Write the results without checking the ordering")
    return parser


def _parse_set(items: Sequence[str]) -> Dict[str, Any]:
    overrides = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = parse_value(raw.strip())
    return overrides


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Map CLI flags onto dotted config paths; ``--set`` entries come last and win"""
    flags = {
        "output_dir": str(args.out) if args.out else None,
        "seed": args.seed,
    }
    get = lambda name: getattr(args, name, None)
    flags.update({
        "network.model": get("model"),
        "network.reuse_count": get("lcm_reuse"),
        "network.delta": get("delta"),
        "network.num_blocks": get("acb"),
    })
    if get("gcm_only"):
        flags["network.gcm_only"] = True
    if get("ohem"):
        flags["loss.ohem"] = {}
    if get("multigrid"):
        flags["network.backbone.last_stage_dilations"] = list(MULTIGRID_DILATIONS)
    if get("scale_aug"):
        flags["augment.scale_range"] = list(SCALE_AUG_RANGE)
    if get("ms"):
        flags["eval.scales"] = list(MS_SCALES)
    if get("mirror"):
        flags["eval.mirror"] = True

    overrides = {k: v for k, v in flags.items() if v is not None}
    overrides.update(_parse_set(args.overrides))
    return overrides


def _synth_seed(cfg: RunConfig, split: str) -> int:
    if cfg.data.synth.seed is not None:
        return cfg.data.synth.seed if split == "train" else cfg.data.synth.seed + 1
    return RngStreams(cfg.seed).child_seed(f"synth-{split}")


def load_split(cfg: RunConfig, split: str) -> List[SegmentationSample]:
    """Samples of ``split`` (train or val): from the manifest when configured, else synthetic"""
    manifest = cfg.data.manifest if split == "train" else cfg.data.val_manifest
    if manifest:
        return SegmentationDataset.from_manifest(manifest, num_classes=cfg.network.num_classes).samples
    count = cfg.data.train_count if split == "train" else cfg.data.val_count
    return SynthGenerator(cfg.data.synth, seed=_synth_seed(cfg, split)).generate(count)


def make_model(cfg: RunConfig) -> SegmentationModel:
    return build_model(cfg.network, RngStreams(cfg.seed).stream("init"))


def cmd_synth(cfg: RunConfig, args: argparse.Namespace, out: Path) -> int:
    logger = logging.getLogger("ContextNet")
    count = args.count if args.count is not None else cfg.data.train_count
    if count < 0:
        raise UsageError("--count must be >= 0")
    if count == 0:
        logger.warning("--count 0: writing an empty manifest")
    samples = SynthGenerator(cfg.data.synth, seed=_synth_seed(cfg, "train")).generate(count)
    dataset = SegmentationDataset(samples)
    manifest = dataset.save(out)
    logger.info(f"Wrote {count} samples and {manifest}")
    for name, pixels in zip(CLASS_NAMES, dataset.class_histogram(len(CLASS_NAMES))):
        print(f"{name} {int(pixels)}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args: argparse.Namespace, out: Path) -> int:
    add_file_handler(str(out / "run.log"), cfg.logging.format)
    model = make_model(cfg)
    trainer = Trainer(model, load_split(cfg, "train"), cfg, val_samples=load_split(cfg, "val"), output_dir=out)
    result = trainer.train()
    logging.getLogger("ContextNet").info(
        f"Finished {result.iterations} iterations, best mIoU {result.best_miou} at {result.best_iteration}"
    )
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args: argparse.Namespace, out: Path) -> int:
    model = make_model(cfg)
    load_checkpoint(model, args.checkpoint)
    evaluator = Evaluator(
        model,
        cfg.network.num_classes,
        scales=cfg.eval.scales,
        mirror=cfg.eval.mirror,
        threads=resolve_threads(cfg.eval.threads),
        ignore_index=cfg.loss.ignore_index,
    )
    result = evaluator.evaluate(load_split(cfg, "val"))
    names = CLASS_NAMES if cfg.network.num_classes == len(CLASS_NAMES) else [
        f"class_{k}" for k in range(cfg.network.num_classes)
    ]
    for name, iou in zip(names, result.per_class):
        print(f"{name} {'nan' if iou is None else f'{iou:.6f}'}")
    print(f"mIoU {result.miou:.6f}")
    print(f"pixAcc {result.pixacc:.6f}")
    return EXIT_OK


def cmd_viz(cfg: RunConfig, args: argparse.Namespace, out: Path) -> int:
    logger = logging.getLogger("ContextNet")
    model = make_model(cfg)
    if args.checkpoint is not None:
        load_checkpoint(model, args.checkpoint)
    model.eval()
    view = tuple(args.view_size) if args.view_size else None
    samples = load_split(cfg, "val")[: max(0, args.samples)]
    for sample in samples:
        padded = pad_to_multiple(sample.image)
        output = model(Tensor(padded[None]))
        if not output.gates:
            logger.warning(f"{cfg.network.model} has no context gates; only overlays are written")
        for k, gate in enumerate(output.gates, start=1):
            values = gate.numpy()[0, 0]
            export_gate_heatmap(values, out / gate_filename(sample.id, k))
            if view is not None:
                export_gate_heatmap(values, out / gate_filename(sample.id, k, view), view_size=view)
        h, w = sample.height, sample.width
        prediction = np.argmax(output.logits.data[0, :, :h, :w], axis=0).astype(np.uint8)
        export_overlay(prediction, out / f"{sample.id}_pred.ppm")
        export_overlay(sample.labels, out / f"{sample.id}_label.ppm", cfg.loss.ignore_index)
    logger.info(f"Wrote visualizations for {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args: argparse.Namespace, out: Path) -> int:
    reports = run_verification(args.scope, seed=cfg.seed)
    for report in reports:
        print(report.summary())
    failed = [r.target for r in reports if not r.passed]
    if failed:
        logging.getLogger("GradChecker").error(f"Gradient check failed for: {', '.join(failed)}")
        return EXIT_VERIFICATION
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, args: argparse.Namespace, out: Path) -> int:
    add_file_handler(str(out / "run.log"), cfg.logging.format)
    report = run_ladder(cfg, load_split(cfg, "train"), load_split(cfg, "val"), min_gap=args.min_gap, output_dir=out)
    for result in report.results:
        print(f"{result.name} {result.miou:.6f} {result.pixacc:.6f}")
    if report.violations and not args.record_only:
        logging.getLogger("Ablation").error(f"{len(report.violations)} ordering violations")
        return EXIT_VERIFICATION
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "viz": cmd_viz,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_run_config(args.config, overrides=collect_overrides(args))
    except (UsageError, ConfigurationError) as e:
        print(f"acnet: error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    setup_logger(level=cfg.logging.level, log_file=cfg.logging.file, fmt=cfg.logging.format)
    logger = logging.getLogger("ContextNet")
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, out / EFFECTIVE_CONFIG)
        return COMMANDS[args.command](cfg, args, out)
    except (UsageError, ConfigurationError) as e:
        print(f"acnet: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        logger.error(str(e))
        return EXIT_RUNTIME
    except Exception as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

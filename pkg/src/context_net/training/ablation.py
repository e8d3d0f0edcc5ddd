"""Component ablation ladder: each rung adds context machinery to the one before."""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml
from pydantic import BaseModel

from ..core.network import build_model
from ..data.sample import SegmentationSample
from ..utils.config import RunConfig, set_nested_value, validate_config
from ..utils.rng import RngStreams
from .evaluator import Evaluator, resolve_threads
from .trainer import Trainer

ABLATION_FILE = "ablation.yaml"

# Rungs in the order their mIoU is expected to increase
LADDER: List[Tuple[str, Dict[str, Any]]] = [
    ("fcn", {"network.model": "fcn"}),
    ("fcn_gcm", {"network.model": "acnet", "network.gcm_only": True}),
    ("gcm_lcm_reuse3", {"network.model": "acnet", "network.num_blocks": 1, "network.reuse_count": 3}),
    ("acnet", {"network.model": "acnet", "network.num_blocks": 3}),
]


class AblationResult(BaseModel):
    """Final-model scores of one rung

    Attributes:
        name: Rung name from ``LADDER``
        miou: Mean IoU of the final model on the validation split
        pixacc: Pixel accuracy of the final model
        best_miou: Best periodic validation mIoU seen during training
        output_dir: Directory holding the rung's log and checkpoints
    """

    name: str
    miou: float
    pixacc: float
    best_miou: Optional[float] = None
    output_dir: str


class AblationReport(BaseModel):
    results: List[AblationResult]
    min_gap: float
    violations: List[str]


def rung_config(cfg: RunConfig, name: str, overrides: Dict[str, Any]) -> RunConfig:
    """``cfg`` with the rung's overrides applied and its own output directory"""
    raw = cfg.model_dump(mode="json")
    raw["network"]["gcm_only"] = False
    for path, value in overrides.items():
        set_nested_value(raw, path, value)
    raw["output_dir"] = str(Path(cfg.output_dir) / name)
    return validate_config(raw)


def ordering_violations(results: Sequence[AblationResult], min_gap: float = 0.01) -> List[str]:
    """Adjacent rungs whose mIoU does not rise by at least ``min_gap``"""
    violations = []
    for lower, upper in zip(results, results[1:]):
        gap = upper.miou - lower.miou
        if gap < min_gap:
            violations.append(
                f"{upper.name} ({upper.miou:.4f}) is not {min_gap:.4f} above {lower.name} ({lower.miou:.4f})"
            )
    return violations


def run_ladder(
    cfg: RunConfig,
    train_samples: Sequence[SegmentationSample],
    val_samples: Sequence[SegmentationSample],
    ladder: Sequence[Tuple[str, Dict[str, Any]]] = LADDER,
    min_gap: float = 0.01,
    output_dir: Optional[Union[str, Path]] = None,
) -> AblationReport:
    """Train and evaluate every rung with the same seed and data; write ``ablation.yaml``

    Raises:
        ConfigurationError: If a rung's overrides do not validate
        DivergenceError: If a rung diverges
    """
    logger = logging.getLogger("Ablation")
    root = Path(output_dir if output_dir is not None else cfg.output_dir)
    base = cfg.model_copy(update={"output_dir": str(root)})
    results = []
    for name, overrides in ladder:
        rung = rung_config(base, name, overrides)
        model = build_model(rung.network, RngStreams(rung.seed).stream("init"))
        logger.info(f"Rung {name}: {model.num_parameters()} parameters")
        trained = Trainer(
            model, train_samples, rung, val_samples=val_samples, output_dir=Path(rung.output_dir)
        ).train()
        final = Evaluator(
            model,
            rung.network.num_classes,
            scales=rung.eval.scales,
            mirror=rung.eval.mirror,
            threads=resolve_threads(rung.eval.threads),
            ignore_index=rung.loss.ignore_index,
        ).evaluate(val_samples)
        results.append(AblationResult(
            name=name,
            miou=final.miou,
            pixacc=final.pixacc,
            best_miou=trained.best_miou,
            output_dir=rung.output_dir,
        ))
        logger.info(f"Rung {name}: mIoU {final.miou:.6f} pixAcc {final.pixacc:.6f}")

    report = AblationReport(results=results, min_gap=min_gap, violations=ordering_violations(results, min_gap))
    for violation in report.violations:
        logger.warning(f"Ordering violated: {violation}")
    root.mkdir(parents=True, exist_ok=True)
    with open(root / ABLATION_FILE, "w") as f:
        yaml.safe_dump(report.model_dump(mode="json"), f, sort_keys=False)
    return report

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .env_handler import EnvHandler


class ConfigurationError(Exception):
    """Raised when a run configuration cannot be loaded or validated"""

    def __init__(self, message: str, key_path: Optional[str] = None):
        super().__init__(message)
        self.key_path = key_path


class StrictModel(BaseModel):
    """Base for config sections: unknown keys are rejected"""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)


# Accepted stage strides and the output stride they give
STAGE_STRIDES = {(4, 2, 2, 1): 16, (4, 2, 1, 1): 8}


class BackboneConfig(StrictModel):
    """Toy dilated backbone: stem, three strided stages, one dilated stage"""

    stem_channels: int = Field(default=16, ge=1)
    stage_channels: List[int] = Field(default_factory=lambda: [16, 32, 64, 64])
    stage_strides: Tuple[int, int, int, int] = (4, 2, 2, 1)
    last_stage_dilations: List[int] = Field(default_factory=lambda: [2, 2, 2])

    @field_validator("stage_channels")
    @classmethod
    def _four_stages(cls, v: List[int]) -> List[int]:
        if len(v) != 4 or any(c < 1 for c in v):
            raise ValueError("stage_channels needs four positive widths")
        return v

    @field_validator("stage_strides")
    @classmethod
    def _known_strides(cls, v: Tuple[int, int, int, int]) -> Tuple[int, int, int, int]:
        if tuple(v) not in STAGE_STRIDES:
            raise ValueError("stage_strides must be (4, 2, 2, 1) for output stride 16 or (4, 2, 1, 1) for 8")
        return v

    @property
    def output_stride(self) -> int:
        return STAGE_STRIDES[tuple(self.stage_strides)]

    @field_validator("last_stage_dilations")
    @classmethod
    def _three_dilations(cls, v: List[int]) -> List[int]:
        if len(v) != 3 or any(d < 1 for d in v):
            raise ValueError("last_stage_dilations needs three rates >= 1")
        return v


class NetworkConfig(StrictModel):
    """Architecture of the segmentation model and its ablation switches"""

    model: Literal["acnet", "fcn"] = "acnet"
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    head_channels: int = Field(default=512, ge=1)
    acb_channels: Tuple[int, int] = (448, 256)
    lowlevel_channels: int = Field(default=48, ge=1)
    aux_channels: int = Field(default=256, ge=1)
    delta: float = Field(default=5.0, gt=0)
    num_classes: int = Field(default=5, ge=2, le=255)
    aux_enabled: bool = True
    reuse_count: int = Field(default=3, ge=1)
    num_blocks: int = Field(default=3, ge=1, le=3)
    gcm_only: bool = False
    gate_mode: Literal["adaptive", "uniform"] = "adaptive"
    local_gating: bool = True
    conv_bias: bool = False

    @model_validator(mode="after")
    def _stride_fits_model(self):
        # context blocks read low-level features at 1/8 and 1/4 below a 1/16 input
        if self.model == "acnet" and self.backbone.output_stride != 16:
            raise ValueError("network.model acnet needs backbone.stage_strides (4, 2, 2, 1)")
        return self


class OptimConfig(StrictModel):
    base_lr: float = Field(default=0.005, ge=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    poly_power: float = Field(default=0.9, gt=0)
    batch_size: int = Field(default=4, ge=1)


class AugmentConfig(StrictModel):
    crop_size: int = Field(default=64, ge=16)
    hflip_prob: float = Field(default=0.5, ge=0, le=1)
    scale_range: Optional[Tuple[float, float]] = None

    @field_validator("scale_range")
    @classmethod
    def _ordered_range(cls, v):
        if v is not None and not 0 < v[0] <= v[1]:
            raise ValueError("scale_range must satisfy 0 < low <= high")
        return v


class OhemConfig(StrictModel):
    threshold: float = Field(default=0.7, gt=0, le=1)
    min_kept: Optional[int] = Field(default=None, ge=1)


class LossConfig(StrictModel):
    ignore_index: int = 255
    aux_weight: float = Field(default=0.4, ge=0)
    ohem: Optional[OhemConfig] = None


class SynthConfig(StrictModel):
    """Synthetic scene generator; ``seed`` defaults to a stream of the run seed"""

    canvas: int = Field(default=64, ge=32)
    blob_count: Tuple[int, int] = (1, 3)
    dot_count: Tuple[int, int] = (3, 10)
    line_count: Tuple[int, int] = (1, 4)
    noise_sigma: float = Field(default=0.03, ge=0)
    max_retries: int = Field(default=50, ge=1)
    seed: Optional[int] = None

    @field_validator("canvas")
    @classmethod
    def _divisible(cls, v: int) -> int:
        if v % 16:
            raise ValueError("canvas must be divisible by 16")
        return v


class DataConfig(StrictModel):
    manifest: Optional[str] = None
    val_manifest: Optional[str] = None
    synth: SynthConfig = Field(default_factory=SynthConfig)
    train_count: int = Field(default=256, ge=1)
    val_count: int = Field(default=64, ge=1)


class EvalConfig(StrictModel):
    scales: List[float] = Field(default_factory=lambda: [1.0])
    mirror: bool = False
    threads: int = Field(default=1, ge=1)

    @field_validator("scales")
    @classmethod
    def _nonempty(cls, v: List[float]) -> List[float]:
        if not v or any(s <= 0 for s in v):
            raise ValueError("scales must be a nonempty list of positive factors")
        return v


class LoggingConfig(StrictModel):
    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    file: Optional[str] = None


class RunConfig(StrictModel):
    """Full experiment description; every field has a default"""

    network: NetworkConfig = Field(default_factory=NetworkConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    total_iters: int = Field(default=4000, ge=1)
    eval_every: int = Field(default=500, ge=1)
    log_every: int = Field(default=20, ge=1)
    output_dir: str = "runs/default"
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _crop_fits_network(self):
        if self.augment.crop_size % 16:
            raise ValueError("augment.crop_size must be divisible by 16")
        return self


# Multi-scale testing factors
MS_SCALES = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25]
MULTIGRID_DILATIONS = [4, 8, 16]
SCALE_AUG_RANGE = (0.5, 2.2)


def parse_value(raw: str) -> Any:
    """Parse a textual config value as a YAML scalar or flow collection"""
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw


def parse_dotted_lines(lines: Iterable[str], source: str = "<text>") -> Dict[str, Any]:
    """Parse ``section.key = value`` lines into a nested dictionary"""
    result: Dict[str, Any] = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{source}:{lineno}: expected 'section.key = value', got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if not key:
            raise ConfigurationError(f"{source}:{lineno}: empty key")
        set_nested_value(result, key, parse_value(raw))
    return result


def set_nested_value(target: Dict[str, Any], path: str, value: Any) -> None:
    """Set value in nested dictionary using dot notation path"""
    current = target
    *parts, final = path.split(".")
    for part in parts:
        nxt = current.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigurationError(f"'{part}' in '{path}' is not a section", key_path=path)
        current = nxt
    current[final] = value


def update_nested(target: Dict, source: Dict) -> None:
    """Update nested dictionary with another dictionary"""
    for key, value in source.items():
        if isinstance(value, dict) and isinstance(target.get(key), dict):
            update_nested(target[key], value)
        else:
            target[key] = value


def flatten(config: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in config.items():
        path = f"{prefix}.{key}" if prefix else key
        if isinstance(value, dict):
            flat.update(flatten(value, path))
        else:
            flat[path] = value
    return flat


def to_dotted_lines(config: RunConfig) -> List[str]:
    """Serialize into the line-oriented ``section.key = value`` format"""
    flat = flatten(config.model_dump(mode="json"))
    return [f"{key} = {json.dumps(value)}" for key, value in flat.items()]


def dump_config(config: RunConfig, path: Union[str, Path]) -> None:
    """Write ``config`` with every default resolved; the suffix selects the format"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix in (".yaml", ".yml"):
        with open(path, "w") as f:
            yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False)
    else:
        path.write_text("\n".join(to_dotted_lines(config)) + "\n")


def _format_validation_error(error: ValidationError) -> ConfigurationError:
    first = error.errors()[0]
    key_path = ".".join(str(part) for part in first["loc"])
    lines = [
        f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in error.errors()
    ]
    return ConfigurationError("Invalid configuration:\n  " + "\n  ".join(lines), key_path=key_path)


def validate_config(raw: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise _format_validation_error(e) from None


class Configuration:
    """Configuration handler for runs

    Priority order:
    1. Explicit overrides (CLI flags, ``--set section.key=value``)
    2. Environment variables (``.env`` file loaded first)
    3. Config file (YAML or ``section.key = value`` lines)
    4. Default values
    """

    # Environment variable mappings
    ENV_MAPPINGS = {
        "ACNET_THREADS": "eval.threads",
        "ACNET_LOG_LEVEL": "logging.level",
        "ACNET_OUTPUT_DIR": "output_dir",
        "ACNET_SEED": "seed",
    }

    def __init__(
        self,
        config_path: Optional[Union[str, Path]] = None,
        overrides: Optional[Dict[str, Any]] = None,
        use_env: bool = True,
    ):
        self.logger = logging.getLogger("Configuration")
        self.config: Dict[str, Any] = {}

        self._load_defaults()
        if config_path:
            self._load_file(Path(config_path))
        if use_env:
            self._load_env()
        for path, value in (overrides or {}).items():
            set_nested_value(self.config, path, value)

        self.run_config = validate_config(self.config)

    def _load_defaults(self) -> None:
        self.config = RunConfig().model_dump(mode="json")

    def _load_file(self, config_path: Path) -> None:
        try:
            text = config_path.read_text()
        except OSError as e:
            raise ConfigurationError(f"Could not read config file {config_path}: {e}")

        if config_path.suffix in (".yaml", ".yml"):
            try:
                loaded = yaml.safe_load(text) or {}
            except yaml.YAMLError as e:
                raise ConfigurationError(f"Could not parse YAML config {config_path}: {e}")
            if not isinstance(loaded, dict):
                raise ConfigurationError(f"Top level of {config_path} must be a mapping")
        else:
            loaded = parse_dotted_lines(text.splitlines(), source=str(config_path))

        try:
            EnvHandler.validate_required_env_vars(loaded)
            loaded = EnvHandler.substitute_env_vars(loaded)
        except ValueError as e:
            raise ConfigurationError(f"Environment variable error: {str(e)}")

        update_nested(self.config, loaded)
        self.logger.info(f"Loaded configuration from {config_path}")

    def _load_env(self) -> None:
        load_dotenv(override=False)
        for env_var, config_path in self.ENV_MAPPINGS.items():
            value = os.getenv(env_var)
            if value is not None:
                set_nested_value(self.config, config_path, parse_value(value))
                self.logger.debug(f"{config_path} set from {env_var}")

    def get(self, path: str, default: Any = None) -> Any:
        """Get configuration value using dot notation path"""
        try:
            current = self.config
            for part in path.split("."):
                current = current[part]
            return current
        except (KeyError, TypeError):
            return default


def load_run_config(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
    use_env: bool = True,
) -> RunConfig:
    return Configuration(config_path, overrides=overrides, use_env=use_env).run_config

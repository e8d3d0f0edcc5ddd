import logging
import os
from pathlib import Path
from typing import Optional

import yaml

DEFAULT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logger(
    config_path: Optional[str] = None,
    level: str = "INFO",
    log_file: Optional[str] = None,
    fmt: str = DEFAULT_FORMAT,
) -> logging.Logger:
    """Setup logging for context_net

    Args:
        config_path: Path to a YAML file with a ``logging`` section
        level: Default log level if not specified in config
        log_file: Default log file if not specified in config
        fmt: Default record format if not specified in config

    Returns:
        The package logger
    """
    log_config = {"level": level, "format": fmt, "file": log_file}

    if config_path and os.path.exists(config_path) and str(config_path).endswith((".yaml", ".yml")):
        try:
            with open(config_path) as f:
                config = yaml.safe_load(f) or {}
            if isinstance(config.get("logging"), dict):
                log_config.update({k: v for k, v in config["logging"].items() if v is not None})
        except (OSError, yaml.YAMLError) as e:
            logging.getLogger("ContextNet").warning(f"Could not load logging config: {e}")

    numeric_level = getattr(logging, str(log_config["level"]).upper(), logging.INFO)
    formatter = logging.Formatter(log_config["format"])

    root = logging.getLogger()
    root.setLevel(numeric_level)
    for handler in list(root.handlers):
        if getattr(handler, "_context_net", False):
            root.removeHandler(handler)
            handler.close()

    console = logging.StreamHandler()
    console.setFormatter(formatter)
    console._context_net = True
    root.addHandler(console)

    if log_config["file"]:
        add_file_handler(log_config["file"], log_config["format"])

    return logging.getLogger("ContextNet")


def add_file_handler(path: str, fmt: str = DEFAULT_FORMAT) -> logging.Handler:
    """Mirror log records into ``path`` (parent directories are created)"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path)
    handler.setFormatter(logging.Formatter(fmt))
    handler._context_net = True
    logging.getLogger().addHandler(handler)
    return handler

from .logger import setup_logger
from .config import Configuration, ConfigurationError, RunConfig, load_run_config
from .rng import RngStreams

__all__ = ['setup_logger', 'Configuration', 'ConfigurationError', 'RunConfig', 'load_run_config', 'RngStreams']

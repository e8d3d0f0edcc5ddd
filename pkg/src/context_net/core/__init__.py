from .gates import FrozenOffsets, GateField, ParameterError
from .layers import Module
from .context_modules import AdaptiveContextBlock, GlobalContextModule, LocalContextModule
from .network import ACNet, Backbone, DilatedFCN, MODEL_REGISTRY, NetworkOutput, build_model
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    'FrozenOffsets', 'GateField', 'ParameterError', 'Module',
    'GlobalContextModule', 'LocalContextModule', 'AdaptiveContextBlock',
    'ACNet', 'Backbone', 'DilatedFCN', 'MODEL_REGISTRY', 'NetworkOutput', 'build_model',
    'CheckpointError', 'load_checkpoint', 'save_checkpoint',
]

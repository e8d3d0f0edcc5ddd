from .sample import CLASS_NAMES, IGNORE_INDEX, DataError, FormatError, SegmentationSample
from .dataset import SegmentationDataset, load_sample, read_manifest, save_sample, write_manifest
from .metrics import ConfusionMatrix, UndefinedMetricError, miou_pixacc, update_confusion
from .synth import GenerationError, SynthGenerator, synth_generate
from .visualize import export_gate_heatmap

__all__ = [
    'CLASS_NAMES', 'IGNORE_INDEX', 'DataError', 'FormatError', 'SegmentationSample',
    'SegmentationDataset', 'load_sample', 'save_sample', 'read_manifest', 'write_manifest',
    'ConfusionMatrix', 'UndefinedMetricError', 'miou_pixacc', 'update_confusion',
    'GenerationError', 'SynthGenerator', 'synth_generate', 'export_gate_heatmap',
]

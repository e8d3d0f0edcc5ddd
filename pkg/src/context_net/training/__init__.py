from .losses import DegenerateBatchError, LossValue, ce_loss, ohem_loss, segmentation_loss
from .optim import DivergenceError, OptimState, ScheduleError, poly_lr, sgd_step
from .augment import augment
from .evaluator import EvalResult, Evaluator, evaluate
from .trainer import Trainer, TrainResult, train
from .ablation import LADDER, AblationReport, AblationResult, ordering_violations, run_ladder

__all__ = [
    'DegenerateBatchError', 'LossValue', 'ce_loss', 'ohem_loss', 'segmentation_loss',
    'DivergenceError', 'OptimState', 'ScheduleError', 'poly_lr', 'sgd_step',
    'augment', 'EvalResult', 'Evaluator', 'evaluate', 'Trainer', 'TrainResult', 'train',
    'LADDER', 'AblationReport', 'AblationResult', 'ordering_violations', 'run_ladder',
]

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from ..core.checkpoint import save_checkpoint
from ..core.network import SegmentationModel
from ..data.sample import SegmentationSample
from ..tensor import ops
from ..tensor.tensor import Tape, Tensor
from ..utils.config import RunConfig
from ..utils.rng import RngStreams
from .augment import augment
from .evaluator import Evaluator, resolve_threads
from .losses import segmentation_loss
from .optim import DivergenceError, OptimState, sgd_step

Batch = Tuple[np.ndarray, np.ndarray]


class TrainResult(BaseModel):
    iterations: int
    losses: List[float]
    aux_losses: List[float]
    best_miou: Optional[float] = None
    best_iteration: Optional[int] = None
    final_checkpoint: Optional[str] = None
    best_checkpoint: Optional[str] = None


def format_log_record(iteration: int, lr: float, loss: float, aux_loss: float) -> str:
    return f"{iteration:8d} {lr:.8e} {loss:.8f} {aux_loss:.8f}"


def format_eval_record(iteration: int, miou: float, pixacc: float) -> str:
    return f"EVAL {iteration:8d} {miou:.6f} {pixacc:.6f}"


class Trainer:
    """Iteration loop: forward, main + weighted auxiliary loss, backward, SGD step, poly lr.

    Batches are a pure function of (seed, iteration): the sample order comes
    from the ``order`` stream of each epoch and every augmentation draws from
    its own (iteration, slot) stream, so the next batch can be prepared on a
    worker thread while the current step runs.

    Args:
        model: Model to train in place
        train_samples: Training samples (at least one)
        cfg: Run configuration
        val_samples: Optional samples for periodic evaluation and best-checkpoint selection
        output_dir: Where ``train.log`` and checkpoints go; ``None`` keeps everything in memory
    """

    def __init__(
        self,
        model: SegmentationModel,
        train_samples: Sequence[SegmentationSample],
        cfg: RunConfig,
        val_samples: Optional[Sequence[SegmentationSample]] = None,
        output_dir: Optional[Path] = None,
    ):
        if not train_samples:
            raise ValueError("Training needs at least one sample")
        self.model = model
        self.train_samples = list(train_samples)
        self.val_samples = list(val_samples) if val_samples else []
        self.cfg = cfg
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.streams = RngStreams(cfg.seed)
        self._orders = {}
        self.logger = logging.getLogger("Trainer")

        self.named_params = list(model.named_parameters())
        for name, param in self.named_params:
            param.name = name
        self.params = [p for _, p in self.named_params]
        self.state = OptimState.create(self.params, cfg.optim, cfg.total_iters)

    def _order(self, epoch: int) -> np.ndarray:
        if epoch not in self._orders:
            self._orders[epoch] = self.streams.stream("order", epoch).permutation(len(self.train_samples))
        return self._orders[epoch]

    def batch_indices(self, iteration: int) -> List[int]:
        size = self.cfg.optim.batch_size
        n = len(self.train_samples)
        indices = []
        for slot in range(size):
            position = iteration * size + slot
            epoch, offset = divmod(position, n)
            indices.append(int(self._order(epoch)[offset]))
        return indices

    def prepare_batch(self, iteration: int) -> Batch:
        images, labels = [], []
        for slot, index in enumerate(self.batch_indices(iteration)):
            rng = self.streams.stream("augment", iteration, slot)
            sample = augment(self.train_samples[index], self.cfg.augment, rng, self.cfg.loss.ignore_index)
            images.append(sample.image)
            labels.append(sample.labels)
        return np.stack(images), np.stack(labels)

    def step(self, iteration: int, batch: Batch) -> Tuple[float, float]:
        """One optimisation step; returns (main loss, auxiliary loss)

        Raises:
            DivergenceError: On a non-finite loss or gradient
        """
        images, labels = batch
        self.model.train()
        self.model.zero_grad()
        with Tape() as tape:
            out = self.model(Tensor(images))
            main = segmentation_loss(out.logits, labels, self.cfg.loss)
            total = main
            aux_value = 0.0
            if out.aux_logits is not None and self.cfg.loss.aux_weight > 0:
                aux = segmentation_loss(out.aux_logits, labels, self.cfg.loss)
                aux_value = aux.item()
                total = ops.add(main, ops.scale(aux, self.cfg.loss.aux_weight))
        loss_value = main.item()
        if not np.isfinite(total.item()):
            raise DivergenceError(
                f"Non-finite loss at iteration {iteration}",
                iteration=iteration,
                diagnostics={"loss": loss_value, "aux_loss": aux_value},
            )
        tape.backward(total)
        self.state.iteration = iteration
        sgd_step(self.params, [p.grad for p in self.params], self.state)
        return loss_value, aux_value

    def _evaluate(self) -> Tuple[float, float]:
        evaluator = Evaluator(
            self.model,
            self.cfg.network.num_classes,
            scales=self.cfg.eval.scales,
            mirror=self.cfg.eval.mirror,
            threads=resolve_threads(self.cfg.eval.threads),
            ignore_index=self.cfg.loss.ignore_index,
        )
        result = evaluator.evaluate(self.val_samples)
        return result.miou, result.pixacc

    def train(self) -> TrainResult:
        total_iters = self.cfg.total_iters
        result = TrainResult(iterations=0, losses=[], aux_losses=[])
        log_file = None
        if self.output_dir is not None:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            log_file = open(self.output_dir / "train.log", "a")

        self.logger.info(f"Training for {total_iters} iterations ({len(self.params)} parameter tensors)")
        try:
            with ThreadPoolExecutor(max_workers=1) as prefetcher:
                pending = prefetcher.submit(self.prepare_batch, 0)
                for iteration in range(total_iters):
                    batch = pending.result()
                    if iteration + 1 < total_iters:
                        pending = prefetcher.submit(self.prepare_batch, iteration + 1)
                    lr = self._lr(iteration)
                    loss, aux = self.step(iteration, batch)
                    result.losses.append(loss)
                    result.aux_losses.append(aux)
                    result.iterations = iteration + 1

                    record = format_log_record(iteration, lr, loss, aux)
                    if log_file is not None:
                        log_file.write(record + "\n")
                    if iteration % self.cfg.log_every == 0:
                        self.logger.info(record)

                    done = iteration + 1
                    if self.val_samples and (done % self.cfg.eval_every == 0 or done == total_iters):
                        miou, pixacc = self._evaluate()
                        eval_record = format_eval_record(done, miou, pixacc)
                        self.logger.info(eval_record)
                        if log_file is not None:
                            log_file.write(eval_record + "\n")
                        if result.best_miou is None or miou > result.best_miou:
                            result.best_miou, result.best_iteration = miou, done
                            if self.output_dir is not None:
                                path = save_checkpoint(self.model, self.output_dir / "checkpoints" / "best")
                                result.best_checkpoint = str(path)
        except DivergenceError as e:
            self.logger.error(f"Diverged at iteration {e.iteration}: {e.diagnostics}")
            raise
        finally:
            if log_file is not None:
                log_file.close()

        if self.output_dir is not None:
            path = save_checkpoint(self.model, self.output_dir / "checkpoints" / "final")
            result.final_checkpoint = str(path)
        return result

    def _lr(self, iteration: int) -> float:
        self.state.iteration = iteration
        return self.state.current_lr()


def train(
    model: SegmentationModel,
    train_samples: Sequence[SegmentationSample],
    cfg: RunConfig,
    val_samples: Optional[Sequence[SegmentationSample]] = None,
    output_dir: Optional[Path] = None,
) -> TrainResult:
    return Trainer(model, train_samples, cfg, val_samples=val_samples, output_dir=output_dir).train()

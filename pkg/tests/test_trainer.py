import numpy as np
import pytest

from context_net.core.checkpoint import load_checkpoint
from context_net.core.network import build_model
from context_net.data.synth import SynthGenerator
from context_net.tensor.tensor import Tensor
from context_net.training.optim import DivergenceError
from context_net.training.trainer import Trainer, format_eval_record, format_log_record, train
from context_net.utils.config import SynthConfig
from context_net.utils.rng import RngStreams


def _model(cfg):
    return build_model(cfg.network, RngStreams(cfg.seed).stream("init"))


@pytest.fixture
def val_samples():
    return SynthGenerator(SynthConfig(canvas=32), seed=8).generate(2)


class TestRecords:
    def test_log_record(self):
        assert format_log_record(3, 0.005, 1.5, 0.25) == "       3 5.00000000e-03 1.50000000 0.25000000"

    def test_eval_record(self):
        assert format_eval_record(500, 0.5, 0.75) == "EVAL      500 0.500000 0.750000"


class TestBatching:
    def test_epoch_visits_every_sample_once(self, tiny_run_cfg, synth_samples):
        trainer = Trainer(_model(tiny_run_cfg), synth_samples, tiny_run_cfg)
        indices = trainer.batch_indices(0) + trainer.batch_indices(1)
        assert sorted(indices) == list(range(len(synth_samples)))

    def test_batches_are_pure_functions_of_the_iteration(self, tiny_run_cfg, synth_samples):
        a = Trainer(_model(tiny_run_cfg), synth_samples, tiny_run_cfg)
        b = Trainer(_model(tiny_run_cfg), synth_samples, tiny_run_cfg)
        b.prepare_batch(5)
        images_a, labels_a = a.prepare_batch(2)
        images_b, labels_b = b.prepare_batch(2)
        np.testing.assert_array_equal(images_a, images_b)
        np.testing.assert_array_equal(labels_a, labels_b)
        assert images_a.shape == (2, 3, 32, 32)

    def test_needs_samples(self, tiny_run_cfg):
        with pytest.raises(ValueError):
            Trainer(_model(tiny_run_cfg), [], tiny_run_cfg)


class TestTraining:
    def test_run_writes_log_and_checkpoints(self, tiny_run_cfg, synth_samples, val_samples, tmp_path):
        out = tmp_path / "run"
        result = Trainer(_model(tiny_run_cfg), synth_samples, tiny_run_cfg, val_samples, out).train()

        assert result.iterations == 3
        assert all(np.isfinite(result.losses))
        assert all(np.isfinite(result.aux_losses))
        lines = (out / "train.log").read_text().splitlines()
        assert len(lines) == 5
        assert lines[0].split()[0] == "0"
        assert [line.split()[1] for line in lines if line.startswith("EVAL")] == ["2", "3"]
        assert result.best_iteration in (2, 3)

        restored = _model(tiny_run_cfg)
        load_checkpoint(restored, out / "checkpoints" / "final")
        assert (out / "checkpoints" / "best" / "model.act").exists()

    def test_learning_rate_is_logged_per_iteration(self, tiny_run_cfg, synth_samples, tmp_path):
        train(_model(tiny_run_cfg), synth_samples, tiny_run_cfg, output_dir=tmp_path)
        rates = [float(line.split()[1]) for line in (tmp_path / "train.log").read_text().splitlines()]
        assert rates[0] == pytest.approx(tiny_run_cfg.optim.base_lr)
        assert rates == sorted(rates, reverse=True)

    def test_same_seed_same_losses(self, tiny_run_cfg, synth_samples):
        first = Trainer(_model(tiny_run_cfg), synth_samples, tiny_run_cfg).train()
        second = Trainer(_model(tiny_run_cfg), synth_samples, tiny_run_cfg).train()
        assert first.losses == second.losses

    def test_repeated_runs_write_identical_files(self, tiny_run_cfg, synth_samples, val_samples, tmp_path):
        for name in ("first", "second"):
            train(_model(tiny_run_cfg), synth_samples, tiny_run_cfg, val_samples, output_dir=tmp_path / name)
        for relative in ("checkpoints/final/model.act", "checkpoints/final/model.manifest", "train.log"):
            assert (tmp_path / "first" / relative).read_bytes() == (tmp_path / "second" / relative).read_bytes()

    def test_zero_learning_rate_leaves_parameters_unchanged(self, tiny_run_cfg, synth_samples):
        optim = tiny_run_cfg.optim.model_copy(update={"base_lr": 0.0})
        cfg = tiny_run_cfg.model_copy(update={"optim": optim, "total_iters": 1})
        model = _model(cfg)
        before = [p.data.copy() for p in model.parameters()]
        Trainer(model, synth_samples, cfg).train()
        for initial, param in zip(before, model.parameters()):
            np.testing.assert_array_equal(param.data, initial)

    def test_non_finite_loss_raises(self, tiny_run_cfg, synth_samples, mocker):
        mocker.patch(
            "context_net.training.trainer.segmentation_loss",
            return_value=Tensor(np.array(np.nan)),
        )
        trainer = Trainer(_model(tiny_run_cfg), synth_samples, tiny_run_cfg)
        with pytest.raises(DivergenceError) as exc_info:
            trainer.train()
        assert exc_info.value.iteration == 0

    @pytest.mark.slow
    def test_loss_decreases_on_a_fixed_batch(self, tiny_run_cfg, synth_samples):
        cfg = tiny_run_cfg.model_copy(update={"total_iters": 40})
        trainer = Trainer(_model(cfg), synth_samples, cfg)
        batch = trainer.prepare_batch(0)
        losses = [trainer.step(it, batch)[0] for it in range(30)]
        assert np.mean(losses[-5:]) < np.mean(losses[:5])

    @pytest.mark.slow
    def test_smoothed_loss_falls_over_a_short_run(self, tiny_run_cfg):
        optim = tiny_run_cfg.optim.model_copy(update={"base_lr": 0.02})
        cfg = tiny_run_cfg.model_copy(update={"optim": optim, "total_iters": 200})
        samples = SynthGenerator(SynthConfig(canvas=32), seed=cfg.seed).generate(16)
        losses = Trainer(_model(cfg), samples, cfg).train().losses
        assert np.mean(losses[-20:]) < 0.6 * np.mean(losses[:5])

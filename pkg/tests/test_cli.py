import numpy as np
import pytest

from context_net import cli
from context_net.cli import EFFECTIVE_CONFIG, collect_overrides, build_parser, main
from context_net.data.dataset import read_manifest
from context_net.data.netpbm import read_pgm
from context_net.training.ablation import AblationReport, AblationResult
from context_net.utils.config import MS_SCALES, Configuration, dump_config, load_run_config


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    for name in Configuration.ENV_MAPPINGS:
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def config_file(tmp_path, tiny_run_cfg):
    path = tmp_path / "tiny.yaml"
    dump_config(tiny_run_cfg, path)
    return path


class TestArguments:
    def test_train_flags_map_to_config_paths(self):
        args = build_parser().parse_args(
            ["train", "--delta", "3", "--lcm-reuse", "2", "--acb", "1", "--ohem", "--multigrid",
             "--scale-aug", "--gcm-only", "--set", "network.delta=7", "--out", "runs/x"]
        )
        overrides = collect_overrides(args)
        assert overrides["network.delta"] == 7
        assert overrides["network.reuse_count"] == 2
        assert overrides["network.num_blocks"] == 1
        assert overrides["network.gcm_only"] is True
        assert overrides["loss.ohem"] == {}
        assert overrides["network.backbone.last_stage_dilations"] == [4, 8, 16]
        assert overrides["augment.scale_range"] == [0.5, 2.2]
        assert overrides["output_dir"] == "runs/x"
        assert "seed" not in overrides

    def test_eval_flags(self):
        args = build_parser().parse_args(["eval", "--checkpoint", "ck", "--ms", "--mirror"])
        cfg = load_run_config(overrides=collect_overrides(args), use_env=False)
        assert cfg.eval.scales == MS_SCALES
        assert cfg.eval.mirror is True

    @pytest.mark.parametrize("argv", [
        ["train", "--no-such-flag"],
        ["train", "--acb", "4"],
        ["eval"],
        ["gradcheck", "--set", "network.bogus=1"],
        ["gradcheck", "--set", "missing_equals"],
        ["train", "--delta", "-1"],
        [],
    ])
    def test_usage_and_config_errors_exit_1(self, argv, capsys):
        assert main(argv) == 1
        assert "acnet: error" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_op_scope_passes(self, tmp_path, capsys):
        assert main(["gradcheck", "--scope", "op", "--out", str(tmp_path / "gc")]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines and all(line.startswith("PASS") for line in lines)
        assert (tmp_path / "gc" / EFFECTIVE_CONFIG).exists()

    def test_failure_exits_3(self, tmp_path, mocker):
        report = mocker.MagicMock(passed=False, target="conv2d")
        report.summary.return_value = "FAIL conv2d"
        mocker.patch.object(cli, "run_verification", return_value=[report])
        assert main(["gradcheck", "--out", str(tmp_path / "gc")]) == 3


class TestSynthCommand:
    def test_writes_manifest_and_histogram(self, tmp_path, capsys):
        out = tmp_path / "data"
        code = main(["synth", "--count", "2", "--set", "data.synth.canvas=32", "--seed", "1", "--out", str(out)])
        assert code == 0
        entries = read_manifest(out / "manifest.txt")
        assert [e[0] for e in entries] == ["synth_00000", "synth_00001"]
        histogram = capsys.readouterr().out.splitlines()
        assert len(histogram) == 5
        assert histogram[0].startswith("background_stuff ")
        assert sum(int(line.split()[1]) for line in histogram) == 2 * 32 * 32

    def test_zero_count_writes_empty_manifest(self, tmp_path):
        out = tmp_path / "empty"
        assert main(["synth", "--count", "0", "--out", str(out)]) == 0
        assert (out / "manifest.txt").read_text() == ""

    def test_negative_count(self, tmp_path):
        assert main(["synth", "--count", "-1", "--out", str(tmp_path / "neg")]) == 1


class TestModelCommands:
    def test_eval_missing_checkpoint_exits_2(self, tmp_path, config_file):
        code = main(["eval", "--config", str(config_file), "--checkpoint", str(tmp_path / "nowhere"),
                     "--out", str(tmp_path / "ev")])
        assert code == 2

    def test_viz_without_checkpoint(self, tmp_path, config_file):
        out = tmp_path / "viz"
        code = main(["viz", "--config", str(config_file), "--view-size", "64", "48", "--out", str(out)])
        assert code == 0
        gate = read_pgm(out / "synth_00000_acb1_gate.pgm")
        assert gate.shape == (2, 2)
        assert gate.max() == 255
        assert read_pgm(out / "synth_00000_acb3_gate_64x48.pgm").shape == (64, 48)
        assert (out / "synth_00000_pred.ppm").exists()
        assert (out / "synth_00000_label.ppm").exists()

    def test_train_then_eval(self, tmp_path, config_file, capsys):
        run = tmp_path / "run"
        assert main(["train", "--config", str(config_file), "--out", str(run)]) == 0
        assert (run / "run.log").exists()
        assert (run / EFFECTIVE_CONFIG).exists()
        checkpoint = run / "checkpoints" / "final"
        assert (checkpoint / "model.manifest").exists()
        capsys.readouterr()

        code = main(["eval", "--config", str(config_file), "--checkpoint", str(checkpoint),
                     "--out", str(tmp_path / "ev")])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 7
        assert lines[-2].startswith("mIoU ")
        assert lines[-1].startswith("pixAcc ")
        pixacc = float(lines[-1].split()[1])
        assert 0.0 <= pixacc <= 1.0
        assert np.isfinite(float(lines[-2].split()[1]))


class TestAblateCommand:
    @pytest.fixture
    def report(self):
        return AblationReport(
            results=[
                AblationResult(name="fcn", miou=0.40, pixacc=0.8, output_dir="a"),
                AblationResult(name="fcn_gcm", miou=0.39, pixacc=0.8, output_dir="b"),
            ],
            min_gap=0.01,
            violations=["fcn_gcm (0.3900) is not 0.0100 above fcn (0.4000)"],
        )

    def test_violations_exit_3(self, tmp_path, config_file, mocker, report, capsys):
        mocker.patch.object(cli, "run_ladder", return_value=report)
        assert main(["ablate", "--config", str(config_file), "--out", str(tmp_path / "ab")]) == 3
        assert capsys.readouterr().out.splitlines()[0] == "fcn 0.400000 0.800000"

    def test_record_only_exits_0(self, tmp_path, config_file, mocker, report):
        run = mocker.patch.object(cli, "run_ladder", return_value=report)
        argv = ["ablate", "--config", str(config_file), "--record-only", "--min-gap", "0.02", "--out", str(tmp_path / "ab")]
        assert main(argv) == 0
        assert run.call_args.kwargs["min_gap"] == 0.02

from pathlib import Path

import pytest
import yaml

from context_net.utils.config import (
    MS_SCALES,
    Configuration,
    ConfigurationError,
    RunConfig,
    dump_config,
    load_run_config,
    parse_dotted_lines,
    set_nested_value,
    to_dotted_lines,
)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "config"


@pytest.fixture
def clean_env(monkeypatch, tmp_path):
    # no stray .env file or ACNET_* variables
    monkeypatch.chdir(tmp_path)
    for name in Configuration.ENV_MAPPINGS:
        monkeypatch.delenv(name, raising=False)


class TestConfiguration:
    def test_defaults(self):
        cfg = load_run_config(use_env=False)
        assert cfg == RunConfig()
        assert cfg.network.delta == 5.0
        assert cfg.network.reuse_count == 3
        assert cfg.optim.base_lr == 0.005
        assert cfg.loss.aux_weight == 0.4
        assert cfg.eval.scales == [1.0]

    def test_yaml_file_is_merged_over_defaults(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump({"network": {"delta": 3.0}, "total_iters": 10}))
        cfg = load_run_config(path, use_env=False)
        assert cfg.network.delta == 3.0
        assert cfg.network.reuse_count == 3
        assert cfg.total_iters == 10

    def test_dotted_file(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("# ablation\nnetwork.reuse_count = 2\neval.scales = [0.5, 1.0]\nloss.ohem = {}\n")
        cfg = load_run_config(path, use_env=False)
        assert cfg.network.reuse_count == 2
        assert cfg.eval.scales == [0.5, 1.0]
        assert cfg.loss.ohem.threshold == 0.7

    def test_overrides_win_over_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("seed: 3\n")
        cfg = load_run_config(path, overrides={"seed": 9, "eval.scales": MS_SCALES}, use_env=False)
        assert cfg.seed == 9
        assert cfg.eval.scales == MS_SCALES

    def test_environment_between_file_and_overrides(self, clean_env, monkeypatch, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("seed: 3\neval:\n  threads: 2\n")
        monkeypatch.setenv("ACNET_SEED", "5")
        monkeypatch.setenv("ACNET_THREADS", "4")
        cfg = load_run_config(path, overrides={"seed": 11})
        assert cfg.eval.threads == 4
        assert cfg.seed == 11

    def test_env_substitution_in_file(self, clean_env, monkeypatch, tmp_path):
        monkeypatch.setenv("RUN_ROOT", "/data/runs")
        path = tmp_path / "run.yaml"
        path.write_text("output_dir: ${RUN_ROOT}/exp1\n")
        assert load_run_config(path).output_dir == "/data/runs/exp1"

    def test_missing_env_var_in_file(self, clean_env, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("output_dir: ${ACNET_TEST_UNSET_VAR}\n")
        with pytest.raises(ConfigurationError, match="ACNET_TEST_UNSET_VAR"):
            load_run_config(path)

    def test_every_missing_env_var_is_listed(self, clean_env, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("output_dir: ${ACNET_TEST_UNSET_ROOT}/${ACNET_TEST_UNSET_NAME}\n")
        with pytest.raises(ConfigurationError) as exc_info:
            load_run_config(path)
        assert "ACNET_TEST_UNSET_NAME, ACNET_TEST_UNSET_ROOT" in str(exc_info.value)

    def test_output_stride_8_for_fcn(self):
        cfg = load_run_config(
            overrides={"network.model": "fcn", "network.backbone.stage_strides": [4, 2, 1, 1]}, use_env=False
        )
        assert cfg.network.backbone.output_stride == 8

    def test_unknown_key_names_its_path(self):
        with pytest.raises(ConfigurationError) as exc_info:
            load_run_config(overrides={"network.deltaa": 1.0}, use_env=False)
        assert exc_info.value.key_path == "network.deltaa"

    @pytest.mark.parametrize("overrides", [
        {"network.delta": 0.0},
        {"network.reuse_count": 0},
        {"augment.crop_size": 40},
        {"network.backbone.last_stage_dilations": [1, 2]},
        {"eval.scales": []},
        {"augment.scale_range": [2.0, 1.0]},
        {"network.backbone.stage_strides": [4, 2, 1, 2]},
        {"network.backbone.stage_strides": [4, 2, 1, 1]},
    ])
    def test_invalid_values(self, overrides):
        with pytest.raises(ConfigurationError):
            load_run_config(overrides=overrides, use_env=False)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_run_config(tmp_path / "absent.yaml", use_env=False)

    def test_non_mapping_yaml(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigurationError):
            load_run_config(path, use_env=False)

    def test_get_with_dotted_path(self):
        config = Configuration(overrides={"network.delta": 7.0}, use_env=False)
        assert config.get("network.delta") == 7.0
        assert config.get("network.nothing", "fallback") == "fallback"


class TestShippedConfigs:
    @pytest.mark.parametrize("path", sorted(CONFIG_DIR.rglob("*.yaml")), ids=lambda p: p.name)
    def test_loads(self, path):
        assert isinstance(load_run_config(path, use_env=False), RunConfig)

    def test_delta_sweep(self):
        deltas = [
            load_run_config(CONFIG_DIR / "ablations" / f"delta_{d}.yaml", use_env=False).network.delta
            for d in (2, 5, 10)
        ]
        assert deltas == [2.0, 5.0, 10.0]

    def test_fcn_output_stride_8_preset(self):
        cfg = load_run_config(CONFIG_DIR / "ablations" / "baseline_fcn_os8.yaml", use_env=False)
        assert (cfg.network.model, cfg.network.backbone.output_stride) == ("fcn", 8)


class TestDumping:
    @pytest.mark.parametrize("name", ["effective_config.yaml", "effective.conf"])
    def test_dump_then_reload(self, tmp_path, name):
        cfg = load_run_config(
            overrides={"network.delta": 2.5, "loss.ohem": {"threshold": 0.6}, "augment.scale_range": [0.5, 2.2]},
            use_env=False,
        )
        dump_config(cfg, tmp_path / name)
        assert load_run_config(tmp_path / name, use_env=False) == cfg

    def test_dotted_lines(self):
        lines = to_dotted_lines(RunConfig())
        assert "network.delta = 5.0" in lines
        assert "loss.ohem = null" in lines


class TestDottedParsing:
    def test_values_are_typed(self):
        parsed = parse_dotted_lines(["a.b = 3", "a.c = true", "d = [1, 2]", "e = text"])
        assert parsed == {"a": {"b": 3, "c": True}, "d": [1, 2], "e": "text"}

    def test_line_without_equals(self):
        with pytest.raises(ConfigurationError, match="2"):
            parse_dotted_lines(["a = 1", "broken line"])

    def test_value_below_scalar_is_rejected(self):
        target = {"a": 1}
        with pytest.raises(ConfigurationError):
            set_nested_value(target, "a.b", 2)

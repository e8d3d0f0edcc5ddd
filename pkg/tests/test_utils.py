import logging

import numpy as np
import pytest

from context_net.utils.logger import add_file_handler, setup_logger
from context_net.utils.rng import RngStreams


@pytest.fixture
def restore_root_logger():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in list(root.handlers):
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    root.setLevel(level)


class TestLogger:
    def test_level_from_yaml_logging_section(self, tmp_path, restore_root_logger):
        path = tmp_path / "run.yaml"
        path.write_text("logging:\n  level: DEBUG\n")
        logger = setup_logger(str(path), level="WARNING")
        assert logger.name == "ContextNet"
        assert logging.getLogger().level == logging.DEBUG

    def test_repeated_setup_does_not_stack_handlers(self, restore_root_logger):
        setup_logger(level="INFO")
        setup_logger(level="INFO")
        ours = [h for h in logging.getLogger().handlers if getattr(h, "_context_net", False)]
        assert len(ours) == 1

    def test_file_handler_writes_records(self, tmp_path, restore_root_logger):
        setup_logger(level="INFO")
        handler = add_file_handler(str(tmp_path / "logs" / "run.log"), fmt="%(name)s %(message)s")
        logging.getLogger("Trainer").info("iteration 3 done")
        handler.flush()
        assert "Trainer iteration 3 done" in (tmp_path / "logs" / "run.log").read_text()

    def test_unknown_level_falls_back_to_info(self, restore_root_logger):
        setup_logger(level="chatty")
        assert logging.getLogger().level == logging.INFO


class TestRngStreams:
    def test_streams_are_reproducible(self):
        a = RngStreams(4).stream("augment", 3, 1).integers(0, 1000, size=5)
        b = RngStreams(4).stream("augment", 3, 1).integers(0, 1000, size=5)
        np.testing.assert_array_equal(a, b)

    def test_streams_are_independent_of_draw_order(self):
        streams = RngStreams(4)
        streams.stream("init").standard_normal(100)
        after = streams.stream("augment", 0).uniform()
        assert after == RngStreams(4).stream("augment", 0).uniform()

    def test_names_keys_and_seeds_separate_streams(self):
        base = RngStreams(4).stream("augment", 0).uniform()
        assert base != RngStreams(4).stream("augment", 1).uniform()
        assert base != RngStreams(4).stream("init", 0).uniform()
        assert base != RngStreams(5).stream("augment", 0).uniform()

    def test_child_seed(self):
        seed = RngStreams(1).child_seed("synth-train")
        assert isinstance(seed, int)
        assert 0 <= seed < 2**31 - 1
        assert seed == RngStreams(1).child_seed("synth-train")

import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from vand_rnn.core import trainer
from vand_rnn.core.tasks import TaskKind, TaskSpec, gen_periodic, generate
from vand_rnn.models import StackedModel, TrainConfig, Trajectory, VandMode
from vand_rnn.utils.random_stream import RandomStream


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running experiment, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return RandomStream.from_seed(1234)


@pytest.fixture
def make_model():
    def _make(mode="vand", input_size=2, output_size=2, hidden=4, layers=2, seed=0, **kwargs):
        return StackedModel(
            input_size=input_size,
            output_size=output_size,
            hidden=hidden,
            layers=layers,
            mode=VandMode.parse(mode),
            rng=RandomStream.from_seed(seed),
            **kwargs,
        )
    return _make


@pytest.fixture
def periodic_train():
    return gen_periodic(n_traj=4, steps=100, seed=0)


@pytest.fixture
def periodic_test():
    return gen_periodic(n_traj=2, steps=120, seed=1)


@pytest.fixture
def tiny_config():
    return TrainConfig(mode="vand", hidden=4, layers=2, batch_size=4, epochs=3, eval_every=2, seed=0, task="periodic")


@pytest.fixture
def ramp_dataset():
    """Trajectories whose x encodes (trajectory index, time step)."""
    def _make(n=10, steps=40):
        out = []
        for i in range(n):
            t = np.arange(steps, dtype=np.float64)
            x = np.stack([1000.0 * i + t, np.sin(t)], axis=1)
            y = np.stack([t, np.cos(t)], axis=1)
            out.append(Trajectory(f"ramp-{i}", x, y))
        return out
    return _make


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def smoke_config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"hidden": 4, "layers": 2, "batch_size": 3, "epochs": 2, "eval_every": 1}))
    return path


ACCEPTANCE_SEEDS = list(range(10))
ACCEPTANCE_TRAIN_STEPS = 600
ACCEPTANCE_TEST_DATA = {"periodic": (2, 2 * ACCEPTANCE_TRAIN_STEPS), "sequential": (4, ACCEPTANCE_TRAIN_STEPS)}


@pytest.fixture(scope="session")
def acceptance_sweep(tmp_path_factory):
    """
    Desk-scale vanilla/vand comparison, run once per task and shared.

    Returns (results table, model directory, test set).
    """
    cache = {}

    def _run(task):
        if task not in cache:
            n_test, test_steps = ACCEPTANCE_TEST_DATA[task]
            train_set = generate(TaskSpec(TaskKind(task), n_traj=10, steps=ACCEPTANCE_TRAIN_STEPS, seed=0))
            test_set = generate(TaskSpec(TaskKind(task), n_traj=n_test, steps=test_steps, seed=1))
            model_dir = tmp_path_factory.mktemp(f"{task}-models")
            config = TrainConfig(hidden=32, layers=2, epochs=300, eval_every=300, task=task)
            table = trainer.run_matrix(
                config, ["vanilla", "vand"], ACCEPTANCE_SEEDS, train_set, test_set,
                workers=os.cpu_count() or 1, model_dir=model_dir,
            )
            cache[task] = (table, model_dir, test_set)
        return cache[task]

    return _run

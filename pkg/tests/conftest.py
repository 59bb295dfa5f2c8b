import numpy as np
import pytest

from graspvae.eval_harness import SyntheticGraspTask, generate_primitives
from graspvae.grasp_data import TabletopPlane
from graspvae.hgg_vae import TrainingConfig, build_hgg, train

RADIUS = 0.04


def opposed_task():
    """Cylinder lying on either side: table at x = -r or x = +r."""
    return SyntheticGraspTask(stable_poses=(TabletopPlane(1.0, 0.0, 0.0, RADIUS),
                                            TabletopPlane(-1.0, 0.0, 0.0, RADIUS)))


@pytest.fixture(scope="session")
def task():
    return SyntheticGraspTask()


@pytest.fixture(scope="session")
def dataset(task):
    return generate_primitives(task, 75, np.random.default_rng(0))


@pytest.fixture(scope="session")
def trained(dataset):
    """Default architecture and training config, 2000 epochs."""
    model, report = train(build_hgg(seed=0), dataset, TrainingConfig(seed=0))
    return model, report


@pytest.fixture(scope="session")
def opposed():
    t = opposed_task()
    data = generate_primitives(t, 75, np.random.default_rng(0))
    model, _ = train(build_hgg(seed=0), data, TrainingConfig(seed=0))
    return t, data, model


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from pdmp.geometry import generate_dataset, make_benchmark_env
from pdmp.kinematics import CSpaceField, PointRobot
from pdmp.occupancy import NetArch, TrainConfig, accuracy, train_net


@pytest.fixture(scope="session")
def divider_env():
    return make_benchmark_env("divider2d")


@pytest.fixture(scope="session")
def divider_trained(divider_env):
    """(net, held-out accuracy) for the default recipe: 20k points, 80/20 split, 64x64, 200 epochs."""
    env = divider_env
    train, test = generate_dataset(env, 20000, seed=0).split(0.8, seed=0)
    net = train_net(train, NetArch(2, (64, 64)), TrainConfig(seed=0), env.lo, env.hi)
    return net, accuracy(net, test.points, test.labels)


@pytest.fixture(scope="session")
def divider_net(divider_trained):
    return divider_trained[0]


@pytest.fixture(scope="session")
def divider_field(divider_env, divider_net):
    return CSpaceField(PointRobot(divider_env.lo, divider_env.hi), divider_net)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

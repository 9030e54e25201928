import numpy as np
import pytest

from physfilter.predictor import PredictorConfig
from physfilter.sim import LtiSystem, NoiseSpec, generate_dataset
from physfilter.trajectory import build_hankel_system

SCALAR = LtiSystem([[0.8]], [[0.5]], [[1.0]])
U_MAX = 6.0


def scalar_hankel(noise=0.0, T=60, depth=4, seed=3, system=SCALAR):
    traj = generate_dataset(system, T=T, excitation="prbs", noise=NoiseSpec(noise), seed=seed,
                            u_max=U_MAX)
    return traj, build_hankel_system(traj, depth, depth)


@pytest.fixture(scope="session")
def scalar_system():
    return SCALAR


@pytest.fixture(scope="session")
def noisy_fixture():
    """Scalar fixture whose raw data certifiably violates temperature consistency."""
    traj, H = scalar_hankel(noise=0.05)
    return traj, H, PredictorConfig(4, 4, 1e-4)


@pytest.fixture(scope="session")
def clean_fixture():
    traj, H = scalar_hankel(noise=0.0)
    return traj, H, PredictorConfig(4, 4, 1e-4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])

import numpy as np
import pytest

from mqnav.simgen import SensorErrorSpec, TrajectorySpec, generate_truth, inverse_imu


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def pts_truth():
    return generate_truth(TrajectorySpec(kind="pts", duration=12.0, seed=3), 1 / 120)


@pytest.fixture(scope="session")
def straight_truth():
    return generate_truth(TrajectorySpec(kind="straight", duration=12.0, heading=0.4, seed=3), 1 / 120)


@pytest.fixture(scope="session")
def pts_ideal(pts_truth):
    return inverse_imu(pts_truth)


@pytest.fixture(scope="session")
def quiet_sensor():
    return SensorErrorSpec.zero()


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)

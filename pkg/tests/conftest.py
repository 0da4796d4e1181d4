import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gpp.geometry import Plane, ProjectionMatrix
from gpp.synth import KITTI_P2, NoiseModel, generate_scenes

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def camera():
    return ProjectionMatrix(KITTI_P2)


@pytest.fixture(scope="session")
def road():
    """Level road 1.65 m below the camera."""
    return Plane([0.0, -1.0, 0.0, 1.65])


@pytest.fixture(scope="session")
def clean_scenes():
    return generate_scenes(11, 40, NoiseModel.none())


@pytest.fixture(scope="session")
def noisy_scenes():
    return generate_scenes(12, 40, NoiseModel())


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


# One line per acceptance criterion, collected by tests/test_acceptance.py and
# echoed at the end of the run so it is visible without ``-s``.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

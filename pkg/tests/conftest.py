import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mosquito_pnp.controller import default_calibration  # noqa: E402
from mosquito_pnp.robot import MotionProfile  # noqa: E402
from mosquito_pnp.scene import WorkcellLayout  # noqa: E402


@pytest.fixture(scope="session")
def layout():
    return WorkcellLayout()


@pytest.fixture(scope="session")
def calib(layout):
    return default_calibration(layout, MotionProfile())

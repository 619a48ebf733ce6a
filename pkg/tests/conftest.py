import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from postdae.raster import LabelMask  # noqa: E402


def random_mask(rng, h=16, w=16, num_classes=2, density=0.3):
    labels = np.where(rng.random((h, w)) < density, rng.integers(1, num_classes, size=(h, w)), 0)
    return LabelMask(labels, num_classes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report one line each at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

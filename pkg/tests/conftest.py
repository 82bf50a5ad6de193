import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cartangeo import CartanModel, ControlSystem, build_srcartan, leaf_space, prolong  # noqa: E402
from cartangeo.models import free_nilpotent_235, heisenberg  # noqa: E402
from cartangeo.srmetric import SubRiemannianMetric  # noqa: E402

ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def m5():
    return free_nilpotent_235()


@pytest.fixture(scope="session")
def m5_system(m5):
    chart, frame = m5
    return ControlSystem.from_fields(frame, chart)


@pytest.fixture(scope="session")
def heis():
    return heisenberg()


@pytest.fixture(scope="session")
def m5_model(m5):
    return CartanModel.from_frame(*m5)


@pytest.fixture(scope="session")
def m5_prolonged(m5_model):
    return prolong(m5_model)


@pytest.fixture(scope="session")
def m5_leafspace(m5_prolonged):
    return leaf_space(m5_prolonged, np.zeros(6))


@pytest.fixture(scope="session")
def m5_structure(m5_model, m5_prolonged, m5_leafspace):
    from dataclasses import replace

    st = build_srcartan(m5_prolonged, SubRiemannianMetric(m5_model.frame))
    return replace(st, leafspace=m5_leafspace)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])

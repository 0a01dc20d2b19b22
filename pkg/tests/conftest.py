import numpy as np
import pytest

from uavfair.scenario import ScenarioConfig, default_config


@pytest.fixture
def small_cfg():
    """Two UAVs, four ground stations, 12 slots: fast enough for full solves."""
    return default_config(seed=0, K=4, N=12)


@pytest.fixture
def line_cfg():
    return ScenarioConfig(M=1, N=4, gt_positions=np.array([[0.0, 0.0], [100.0, 0.0]]))


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one pass/fail line per acceptance criterion for the run summary."""

    def record(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

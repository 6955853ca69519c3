import numpy as np
import pytest

from netprop.core import GroupData, NetworkPanel
from netprop.dgp import DgpConfig, simulate
from netprop.estimator import prepare

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_sim():
    return simulate(DgpConfig(num_groups=40), seed=7)


@pytest.fixture(scope="session")
def small_sample(small_sim):
    truth = small_sim.node_truth()
    return prepare(small_sim.panel, {"p_d": truth["p_d"], "p_f": truth["p_f"]})


def path_group(gid=0, y=(1.0, 2.0, 3.0), d=(0, 1, 0)):
    a = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    return GroupData(gid, a, np.array(d), np.array(y), np.array([[0.0], [1.0], [0.0]]))


@pytest.fixture
def path_panel():
    return NetworkPanel((path_group(),))

import numpy as np
import pytest

from roughflow.driver import lift_smooth, named_path, pure_area_driver
from roughflow.fields import linear_field, trig_field

W = np.array([[[1.0, 0.5], [-0.3, 0.8]], [[0.6, -0.7], [0.4, 1.0]]])
PHASES = np.array([[0.1, 0.4], [-0.2, 0.3]])
PROBES = np.array([[0.3, -0.2], [1.0, 0.5], [-0.7, 0.9]])
AREA = np.array([[0.0, 1.0], [-1.0, 0.0]])


def area_matrices(seed=0, scale=0.25):
    """Two random 2x2 matrices, each rescaled to operator norm ``scale``."""
    B = np.random.default_rng(seed).normal(size=(2, 2, 2))
    return np.array([b / np.linalg.norm(b, 2) * scale for b in B])


def bracket(B):
    # generator of the pure-area flow for the area [[0, 1], [-1, 0]]
    return B[1] @ B[0] - B[0] @ B[1]


@pytest.fixture(scope="session")
def trig():
    return trig_field(W, PHASES)


@pytest.fixture(scope="session")
def circle():
    path, velocity = named_path("circle")
    d = lift_smooth(path, T=1.0, substeps=1 << 14, depth=3)
    d.velocity = velocity
    return d


@pytest.fixture(scope="session")
def area_fixture():
    B = area_matrices()
    return linear_field(B), pure_area_driver(AREA), bracket(B)


ACCEPTANCE = []


def record(number, name, ok, detail):
    """One pass/fail line per acceptance criterion, repeated in the terminal summary."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)

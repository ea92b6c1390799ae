import math

import numpy as np
import pytest

from latskg.construction import build_chain
from latskg.lattice import Lattice

HEX = np.array([[1.0, 0.5], [0.0, math.sqrt(3) / 2]])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def hexagonal():
    return Lattice(HEX)


@pytest.fixture(scope="session")
def chain4():
    """n = 4, p = 11 chain with k = (2, 1, 0)."""
    return build_chain(4, (0.05, 0.2, 0.8), np.random.default_rng(3))


@pytest.fixture(scope="session")
def fine_chain4():
    """n = 4 chain with k = (4, 1, 0): L1 is the scaled cube lattice."""
    return build_chain(4, (0.01, 0.2, 0.8), np.random.default_rng(0))


def brute_nearest(B, x, reach=4):
    """Nearest point by scanning a coordinate box; ties go to the lexicographically smallest."""
    n = B.shape[1]
    centre = np.rint(np.linalg.solve(B, x)).astype(int)
    best = None
    for off in np.ndindex(*([2 * reach + 1] * n)):
        z = centre + np.array(off) - reach
        d = float(np.sum((B @ z - x) ** 2))
        key = (round(d, 9), tuple(z))
        if best is None or key < best[0]:
            best = (key, z)
    return best[1]


# criterion number -> (passed, title, detail), filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {title}: {detail}")

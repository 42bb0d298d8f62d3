import functools

import numpy as np
import pytest

from hodge_tree.mesh import generate_structured
from hodge_tree.poincare import PoincareOperator
from hodge_tree.trees import build_partition
from hodge_tree.whitney import FormComplex


class Setup:
    def __init__(self, dim, N):
        self.dim, self.N = dim, N
        self.mesh = generate_structured(dim, N)
        self.fc = FormComplex(self.mesh)
        self.part = build_partition(self.mesh)
        self.op = PoincareOperator(self.fc, self.part)


@functools.lru_cache(maxsize=None)
def setup(dim, N):
    return Setup(dim, N)


@pytest.fixture
def rng():
    return np.random.default_rng(20241016)


SMALL = [(2, 1), (2, 3), (2, 4), (3, 1), (3, 2)]


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])

import numpy as np
import pytest

from growthpatterns.cohort import RETAINED_VISITS, TrajectoryMatrix
from growthpatterns.synth import SynthSpec

# published K-means vs EM level counts: rows K-means C1..C4, columns EM C1..C4
REFERENCE_COUNTS = np.array(
    [
        [356, 13, 0, 0],
        [4, 552, 36, 0],
        [0, 0, 230, 1],
        [0, 1, 0, 58],
    ]
)

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def reference_labels():
    """Two level vectors whose joint counts are exactly REFERENCE_COUNTS."""
    a, b = [], []
    for i in range(4):
        for j in range(4):
            a += [i] * REFERENCE_COUNTS[i, j]
            b += [j] * REFERENCE_COUNTS[i, j]
    ids = tuple(f"K{n:05d}" for n in range(len(a)))
    return ids, np.array(a), np.array(b)


def make_matrix(values, ages=None, ids=None, attribute="weight"):
    values = np.asarray(values, dtype=float)
    n, d = values.shape
    if ages is None:
        ages = np.tile(np.arange(1, d + 1, dtype=float), (n, 1))
    if ids is None:
        ids = tuple(f"c{i:04d}" for i in range(n))
    visits = RETAINED_VISITS if d == len(RETAINED_VISITS) else tuple(range(1, d + 1))
    return TrajectoryMatrix(attribute, ids, values, ages, visits)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_spec():
    return SynthSpec(n_children=120, seed=7)

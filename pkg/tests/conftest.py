import numpy as np
import pytest

from scribble_pfa.core import ClassSet, ProbabilityMap, RgbImage, validate_probability_map

# Filled by tests/test_acceptance.py, printed once at the end of the session.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def random_probs(rng, h, w, c, alpha=1.0, source=None) -> ProbabilityMap:
    p = rng.dirichlet(np.full(c, alpha), size=(h, w))
    return validate_probability_map(ProbabilityMap(p, ClassSet(c), source))


def random_image(rng, h, w) -> RgbImage:
    return RgbImage(rng.random((h, w, 3)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

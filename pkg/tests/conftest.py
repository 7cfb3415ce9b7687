import numpy as np
import pytest

from parcv2.tensor import Rng


@pytest.fixture
def rng():
    return Rng(1234)


def naive_pointwise(x, weight, bias):
    """Triple loop over (n, o, c) at each pixel, float64."""
    n, c, h, w = x.shape
    out = np.zeros((n, weight.shape[0], h, w))
    for b in range(n):
        for o in range(weight.shape[0]):
            out[b, o] = bias[o]
            for i in range(c):
                out[b, o] += float(weight[o, i]) * x[b, i].astype(np.float64)
    return out


# acceptance lines collected by tests/test_acceptance.py, echoed once more at
# the end of the session so they are easy to find in long logs
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

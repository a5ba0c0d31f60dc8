import numpy as np
import pytest

from degenlab import metric


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["identity", "diagonal", "affine", "rotation"])
def any_metric(request):
    return {
        "identity": metric.identity(2),
        "diagonal": metric.constant_diagonal([1.0, 2.0]),
        "affine": metric.affine_diagonal(0.5),
        "rotation": metric.rotation(1.0, 3.0, 1.0),
    }[request.param]


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def report_line(request):
    """Record one PASS/FAIL line; all lines are repeated in the terminal summary."""
    def record(criterion, ok, detail):
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash.setdefault(ACCEPTANCE, []).append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

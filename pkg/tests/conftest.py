import numpy as np
import pytest

from imprecise_em import labels as L


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs():
    return L.make_blobs(400, C=10, D=16, seed=7)


def random_simplex(rng, shape, floor=0.0):
    p = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
    if floor:
        p = p + floor
        p /= p.sum(axis=-1, keepdims=True)
    return p


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line: ``verdict(n, passed, detail)``."""
    lines = request.config.stash[_VERDICTS]

    def record(n, passed, detail):
        line = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((n, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from erclust.core import BoxObservation, GallerySet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_gallery(rng):
    X = rng.random((12, 16))
    G = rng.random((5, 16))
    S = rng.random((30, 16))
    return X, GallerySet(G, S, g_sim=7)


def box(frame, x, y=0.0, w=10.0, h=10.0, **kw):
    return BoxObservation(frame, x, y, w, h, **kw)


_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; call before asserting so failures are reported too."""
    results = request.config.stash.setdefault(_RESULTS, [])

    def report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        results.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nclp.graph import FeatureMatrix, Graph

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_graph(rng, n, p=0.4):
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < p
    return Graph(n, np.stack([iu[0][keep], iu[1][keep]], axis=1))


@pytest.fixture
def path3():
    return Graph(3, [(0, 1), (1, 2)])


@pytest.fixture
def small_data():
    rng = np.random.default_rng(7)
    g = random_graph(rng, 8, 0.45)
    x = FeatureMatrix(rng.normal(size=(8, 4)))
    return g, x


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title, msg = results[number]
        line = f"criterion {number:2d} {status}: {title}"
        terminalreporter.write_line(f"{line} -- {msg}" if msg else line)

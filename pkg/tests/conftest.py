import numpy as np
import pytest

from lllvm.graph import build_knn_graph
from lllvm.model import Dataset, Hyperparams, build_precision_cache


def random_instance(seed, n=6, d_y=3, d_x=2, k=2, alpha=None, gamma=None):
    """Small random connected problem: (dataset, graph, hyperparams, cache)."""
    rng = np.random.default_rng(seed)
    while True:
        Y = rng.standard_normal((n, d_y))
        g = build_knn_graph(Y, k)
        if g.is_connected:
            break
    h = Hyperparams(
        alpha=rng.uniform(0.3, 2.0) if alpha is None else alpha,
        gamma=rng.uniform(0.3, 2.0) if gamma is None else gamma,
        d_x=d_x,
    )
    return Dataset(Y), g, h, build_precision_cache(g, h, d_y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from piconsensus.graph import build_graph


def random_graph(rng, n, p, connected=False):
    """Erdos-Renyi style edge list; with ``connected`` a random spanning tree is added first."""
    edges = {}
    if connected:
        order = rng.permutation(n)
        for k in range(1, n):
            a, b = int(order[k]), int(order[rng.integers(k)])
            edges[(min(a, b), max(a, b))] = float(rng.uniform(0.1, 5.0))
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in edges and rng.random() < p:
                edges[(i, j)] = float(rng.uniform(0.1, 5.0))
    return build_graph(n, [(i, j, w) for (i, j), w in edges.items()])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for the acceptance summary, then assert."""
    def check(label, ok, detail):
        request.config.stash.setdefault(_ACCEPTANCE, []).append(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        assert ok, f"{label}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

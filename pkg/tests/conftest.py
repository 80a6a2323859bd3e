import numpy as np
import pytest
from hypothesis import settings

from assistnav.env import EnvironmentGraph, chain_graph, generate_environment

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def floyd_warshall(g: EnvironmentGraph) -> np.ndarray:
    """Independent all-pairs oracle (edge lengths from raw positions)."""
    n = g.n_nodes
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for u, v in g.edges:
        w = float(np.sqrt(((g.positions[u] - g.positions[v]) ** 2).sum()))
        d[u, v] = d[v, u] = min(d[u, v], w)
    for k in range(n):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return d


def random_tree_graph(n: int, seed: int) -> EnvironmentGraph:
    """Random labelled tree with unit-ish edges laid out in 3D."""
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, 10, size=(n, 3))
    edges = [(int(rng.integers(0, v)), v) for v in range(1, n)]
    return EnvironmentGraph(pos, tuple(range(n)), tuple(edges))


def random_graph(n: int, seed: int, extra: float = 1.0) -> EnvironmentGraph:
    """Connected random graph: a random tree plus about ``extra * n`` chords."""
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, 10, size=(n, 3))
    edges = {tuple(sorted((int(rng.integers(0, v)), v))) for v in range(1, n)}
    for _ in range(int(extra * n)):
        u, v = rng.choice(n, size=2, replace=False)
        edges.add((int(min(u, v)), int(max(u, v))))
    return EnvironmentGraph(pos, tuple(int(s) for s in rng.integers(0, 2**62, n)), tuple(sorted(edges)))


@pytest.fixture
def chain5():
    return chain_graph(5)


@pytest.fixture(scope="session")
def env40():
    return generate_environment(40, seed=11)


# criterion number -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

import itertools

import numpy as np
import pytest

from stafem.mesh import from_arrays, generate_block_mesh


@pytest.fixture(scope="session")
def block2():
    return generate_block_mesh(2, 2, 2)


@pytest.fixture(scope="session")
def block3():
    return generate_block_mesh(3, 3, 3)


@pytest.fixture(scope="session")
def block4():
    return generate_block_mesh(4, 4, 4)


@pytest.fixture
def single_tet():
    return from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])


@pytest.fixture
def two_tets():
    pts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]]
    return from_arrays(pts, [[0, 1, 2, 3], [1, 2, 3, 4]])


def dense_laplacian(mesh, mask):
    """Brute force: every vertex pair of every active tet, read from the raw tet list."""
    n = mesh.n_vertices
    adj = np.zeros((n, n), dtype=bool)
    for t in np.flatnonzero(mask):
        for a, b in itertools.combinations(mesh.tets[t].tolist(), 2):
            adj[a, b] = adj[b, a] = True
    lap = -adj.astype(np.float64)
    lap[np.diag_indices(n)] = adj.sum(axis=1)
    return lap


def random_mask(mesh, rng, p=0.7):
    return rng.random(mesh.n_tets) < p


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

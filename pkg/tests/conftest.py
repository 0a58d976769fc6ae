import numpy as np
import pytest
import scipy.sparse as sp

from ctnn.raster import ElevationGrid


def random_grid(rng, rows, cols, n_levels=4, scale=1.0, nodata=0.0):
    """Blocky random surface: few distinct levels so flat zones are large and irregular."""
    vals = rng.integers(0, n_levels, size=(rows, cols)).astype(float) * scale
    vals += rng.uniform(-0.2, 0.2, size=(rows, cols)) * scale
    mask = rng.random((rows, cols)) < nodata if nodata else None
    return ElevationGrid(vals, mask)


def random_tree_adjacency(rng, n):
    """Directed random tree (random orientation per edge) as a CSR matrix."""
    w = sp.lil_matrix((n, n))
    for i in range(1, n):
        p = int(rng.integers(0, i))
        if rng.random() < 0.5:
            w[i, p] = 1.0
        else:
            w[p, i] = 1.0
    return sp.csr_matrix(w)


def pits_and_plateaus():
    """Two pits in rings, a shared background, four plateaus (three with a 5, two with a 6)."""
    g = np.full((7, 29), 3.0)
    for c0 in (1, 5):
        g[2:5, c0 : c0 + 3] = 2.0
        g[3, c0 + 1] = 1.0
    for c0 in (9, 15):
        g[1:6, c0 : c0 + 5] = 4.0
        g[2:5, c0 + 1 : c0 + 4] = 5.0
        g[3, c0 + 2] = 6.0
    g[2:5, 21:24] = 4.0
    g[3, 22] = 5.0
    g[2:5, 25:28] = 4.0
    return ElevationGrid(g)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

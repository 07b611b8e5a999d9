import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from spikewave.lattice import OFFSETS, DelayField, GridSpec


def random_grid(rng, h, w, mask_p=0.0, spacing=5.1):
    mask = rng.random((h, w)) >= mask_p
    if not mask.any():
        mask[rng.integers(h), rng.integers(w)] = True
    return GridSpec(w, h, spacing, mask)


def random_field(rng, grid, integer=False):
    vals = rng.uniform(1.0, 10.0, (grid.height, grid.width, 8))
    if integer:
        vals = rng.integers(1, 11, vals.shape).astype(float)
    vals[~grid.edge_mask] = np.nan
    return DelayField(grid, vals)


def oracle_distances(delays, plus_one=True):
    """All-pairs shortest paths via scipy, built straight from the raw value array.

    Weight of the step j -> i is round_half_up(values[i, k]) (+1), where k is
    the direction from i toward j. Returns (dist matrix, list of nodes).
    """
    grid = delays.grid
    nodes = grid.nodes()
    index = {n: i for i, n in enumerate(nodes)}
    rows, cols, data = [], [], []
    for (r, c) in nodes:
        for k, (dr, dc) in enumerate(OFFSETS):
            j = (r + dr, c + dc)
            if j in index:
                w = np.floor(delays.values[r, c, k] + 0.5) + (1 if plus_one else 0)
                rows.append(index[j])
                cols.append(index[(r, c)])
                data.append(w)
    n = len(nodes)
    m = csr_matrix((data, (rows, cols)), shape=(n, n))
    return shortest_path(m, method="D", directed=True), nodes


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

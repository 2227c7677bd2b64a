import numpy as np
import pytest

from channelms.assembly import Discretization
from channelms.mesh import (ChannelParams, CoarsePartition, generate_channel,
                            partition_coarse)


@pytest.fixture(scope="session")
def tiny_mesh():
    # 2x2 quad grid split into 8 triangles: the smallest mesh with an interior
    # facet structure rich enough to exercise every assembly path
    params = ChannelParams(length=1.0, half_width=0.1, target_h=0.5)
    mesh = generate_channel(params)
    assert mesh.n_cells == 8
    return mesh


@pytest.fixture(scope="session")
def tiny_dz(tiny_mesh):
    return Discretization.from_mesh(tiny_mesh)


@pytest.fixture(scope="session")
def tiny_partition(tiny_mesh):
    # partition_coarse enforces a minimum domain size; build the two-slab
    # split directly for the 8-cell fixture
    assign = (tiny_mesh.cell_centroids()[:, 0] > 0.5).astype(np.int64)
    return CoarsePartition(2, assign, "structured")


@pytest.fixture(scope="session")
def small_mesh():
    # a few hundred cells: big enough for physics, small enough for speed
    params = ChannelParams(length=0.5, half_width=0.05, target_cells=400)
    return generate_channel(params)


@pytest.fixture(scope="session")
def small_dz(small_mesh):
    return Discretization.from_mesh(small_mesh)


@pytest.fixture(scope="session")
def small_partition(small_mesh):
    return partition_coarse(small_mesh, 4, mode="structured")


@pytest.fixture
def rng():
    return np.random.default_rng(20260824)


def pytest_terminal_summary(terminalreporter):
    from helpers import CRITERION_LINES
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)

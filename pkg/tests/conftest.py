import numpy as np
import pytest

from curves import bump
from src.data.simulation import SimConfig, simulate
from src.model.registration import MvSample
from src.model.spatial import SpatialLayout
from src.model.warping import SampledFunction, TimeGrid, srsf_transform


@pytest.fixture
def grid():
    return TimeGrid.uniform(101)


@pytest.fixture
def small_grid():
    return TimeGrid.uniform(41)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def bump_srsf(grid):
    t = grid.points
    return srsf_transform(SampledFunction(grid, bump(t, 0.35) + 0.6 * bump(t, 0.7)))


@pytest.fixture
def shifted_panel(small_grid):
    """Bumps with observation specific shifts, K = 2 components on two sites"""
    t = small_grid.points
    shifts = np.linspace(-0.06, 0.06, 6)
    values = np.stack(
        [
            np.stack([bump(t, 0.35 + s) + 0.5 * bump(t, 0.7 + s), 0.8 * bump(t, 0.5 - s, 0.1)])
            for s in shifts
        ]
    )
    layout = SpatialLayout(np.array([[0.0, 0.0], [1.0, 0.0]]))
    return MvSample(small_grid, values, layout)


@pytest.fixture(scope="session")
def sim_truth():
    return simulate(SimConfig(setting=1, n=4, K=5, m=31, seed=11))

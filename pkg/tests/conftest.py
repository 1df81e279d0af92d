import numpy as np
import pytest

from resonlab import model
from resonlab.fock import ModeGrid


def reduced_spec(kind="nelson", modes=8, n_max=2):
    """Default physics on a coarser grid: fast enough for unit tests."""
    base = model.default_spec(kind)
    grid = ModeGrid.geometric(base.grid.k_min, base.grid.k_max, modes)
    return model.ModelSpec(particle=base.particle, form=base.form, grid=grid,
                           n_max=n_max, kind=kind,
                           sigma_threshold=base.sigma_threshold)


@pytest.fixture(scope="session")
def default_nelson():
    return model.default_spec("nelson")


@pytest.fixture(scope="session")
def default_qed():
    return model.default_spec("qed-toy")


@pytest.fixture(scope="session")
def small_nelson():
    return reduced_spec("nelson", modes=8)


@pytest.fixture(scope="session")
def small_qed():
    return reduced_spec("qed-toy", modes=8)


@pytest.fixture(scope="session")
def tracked_default(default_nelson):
    """Resonance of the default instance at g = 0.05, Im theta = 0.3."""
    from resonlab.spectral import track_resonance
    return track_resonance(default_nelson, 0.3j, [0.0, 0.05], 1)[-1]


def three_point_extrapolate(xs, ys):
    """Limit of y(x) as x -> 0 assuming y = y0 + c x^s, x halving."""
    y1, y2, y3 = ys
    r1, r2 = y1 - y2, y2 - y3
    s = np.log2(abs(r1 / r2))
    return y3 - r2 / (2 ** s - 1)

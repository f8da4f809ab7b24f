import numpy as np
import pytest

from weakot.measures import Coupling, DiscreteMeasure


def random_measure(rng, n, d, scale=1.0, zero_mass=False):
    w = rng.dirichlet(np.ones(n))
    if zero_mass and n > 1:
        w[rng.integers(n)] = 0.0
        w /= w.sum()
    return DiscreteMeasure(rng.normal(size=(n, d)) * scale, w)


def random_instance(rng, max_n=8, max_m=8, dims=(1, 2), max_cells=None):
    d = int(rng.choice(dims))
    while True:
        n, m = int(rng.integers(1, max_n + 1)), int(rng.integers(1, max_m + 1))
        if max_cells is None or n * m <= max_cells:
            break
    mu = random_measure(rng, n, d, scale=rng.uniform(0.3, 2.0))
    nu = random_measure(rng, m, d)
    return mu, nu


@pytest.fixture
def counterexample():
    mu = DiscreteMeasure([-1.0, 1.0], [0.5, 0.5])
    nu = DiscreteMeasure([-2.0, 0.0, 2.0], [0.25, 0.5, 0.25])
    return mu, nu


@pytest.fixture
def counterexample_optimal(counterexample):
    mu, nu = counterexample
    return Coupling(mu, nu, [[0.25, 0.25, 0.0], [0.0, 0.25, 0.25]])


@pytest.fixture
def antitone():
    mu = DiscreteMeasure([-1.0, 1.0])
    return Coupling(mu, mu, [[0.0, 0.5], [0.5, 0.0]])

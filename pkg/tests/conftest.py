import numpy as np
import pytest

from stability.processes import Window
from stability.semigroups import make_semigroup
from stability.streams import make_rng


@pytest.fixture
def rng():
    return make_rng(20240607)


@pytest.fixture(scope="session")
def pure_death():
    return make_semigroup("PureDeath")


@pytest.fixture(scope="session")
def lbd():
    return make_semigroup("LinearBirthDeath", lam=1.0)


@pytest.fixture(scope="session")
def general():
    """{0: 0.75, 2: 0.25} at normalised rate 2, i.e. LinearBirthDeath(0.5)."""
    return make_semigroup("General", offspring=[(0, 0.75), (2, 0.25)])


@pytest.fixture
def torus():
    return Window.torus([1.0, 1.0])


@pytest.fixture
def box():
    return Window.box([2.0, 1.0])


@pytest.fixture
def assert_within_se():
    """Every estimate within ``k`` standard errors of its target."""
    def check(estimates, targets, k=4.5):
        for (value, se), target in zip(estimates, targets):
            assert abs(value - target) <= k * se + 1e-12, f"{value} vs {target} (se {se})"
    return check


@pytest.fixture
def mean_se():
    def compute(values):
        values = np.asarray(values, dtype=float)
        return float(values.mean()), float(values.std(ddof=1) / np.sqrt(len(values)))
    return compute

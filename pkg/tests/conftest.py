import numpy as np
import pytest

from fragbec.basis import build_mode_basis
from fragbec.hartree import PotentialSpec


@pytest.fixture(scope="session")
def two_mode_basis():
    return build_mode_basis(2, 1, 1.0)


@pytest.fixture(scope="session")
def three_mode_basis():
    return build_mode_basis(3, 1, 1.0)


@pytest.fixture(scope="session")
def spin_basis():
    """Single spatial mode with two spinor levels."""
    return build_mode_basis(1, 2, 1.0)


@pytest.fixture(scope="session")
def toy_basis():
    """Default toy-model truncation: three spatial modes, two spinor levels."""
    return build_mode_basis(3, 2, 1.0)


@pytest.fixture(scope="session")
def gaussian_potential():
    return PotentialSpec(kind="gaussian", v0=1.0, width=1.0)


@pytest.fixture(scope="session")
def zero_potential():
    return PotentialSpec(kind="zero")


def random_unit(rng, dim):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)

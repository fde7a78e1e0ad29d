import numpy as np
import pytest

from nmodes.dynamics import linearize
from nmodes.models import (
    PolynomialOscillator,
    RigidChainParams,
    build_rigid_chain,
    reference_arm,
    reference_models,
)

G0 = 9.81
LINK_MASS = 1062.0 * np.pi * 0.02**2 * 0.04
LINK_LENGTH = 0.04


@pytest.fixture(scope="session")
def models():
    return reference_models()


@pytest.fixture(scope="session")
def linear_modes(models):
    return {name: linearize(m) for name, m in models.items()}


@pytest.fixture(scope="session")
def arm():
    return reference_arm(1)


def single_link(k=2.0, gravity=G0, direction=(0.0, -1.0)):
    """One thin rod with the reference link mass and length."""
    return build_rigid_chain(RigidChainParams(1, LINK_LENGTH, LINK_MASS, k, gravity, direction))


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


@pytest.fixture(scope="session")
def oscillator():
    return PolynomialOscillator([[1.0]], [[4.0]])

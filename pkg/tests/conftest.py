import numpy as np
import pytest

from mdspde.model import build_model, diffusion, reaction
from mdspde.spectral import Component, DomainSpec, Field, build_basis

N_MODES = 16


@pytest.fixture(scope="session")
def domain():
    return DomainSpec(length=np.pi)


@pytest.fixture(scope="session")
def basis_slow(domain):
    return build_basis(domain, Component.SLOW, N_MODES)


@pytest.fixture(scope="session")
def basis_fast(domain):
    return build_basis(domain, Component.FAST, N_MODES)


@pytest.fixture(scope="session")
def lin_model(domain, basis_slow, basis_fast):
    """f = 0.3 y, uncoupled fast equation, unit diffusion."""
    return build_model(
        domain, basis_slow, basis_fast,
        reaction("linear_y", b=0.3), reaction("zero"), diffusion("constant", c=1.0),
    )


@pytest.fixture(scope="session")
def noise_model(domain, basis_slow, basis_fast):
    """Pure noise: no reactions, unit diffusion."""
    return build_model(
        domain, basis_slow, basis_fast,
        reaction("zero"), reaction("zero"), diffusion("constant", c=1.0),
    )


@pytest.fixture(scope="session")
def bnd_model(domain, basis_slow, basis_fast):
    """Bounded nonlinear reactions on both components."""
    return build_model(
        domain, basis_slow, basis_fast,
        reaction("tanh_sum", alpha=1.0, beta=0.3),
        reaction("tanh_y_damped", kappa=0.2),
        diffusion("constant", c=1.0),
    )


@pytest.fixture(scope="session")
def sigmoid_model(domain, basis_slow, basis_fast):
    """Bounded state-dependent diffusion."""
    return build_model(
        domain, basis_slow, basis_fast,
        reaction("tanh_sum", alpha=1.0, beta=0.3),
        reaction("zero"),
        diffusion("bounded_sigmoid", c1=0.5, c2=2.0),
    )


def unit(basis, k):
    coeffs = np.zeros(basis.n)
    coeffs[k - 1] = 1.0
    return Field(coeffs, basis)


def zero(basis):
    return Field(np.zeros(basis.n), basis)


@pytest.fixture
def unit_field():
    return unit


@pytest.fixture
def zero_field():
    return zero

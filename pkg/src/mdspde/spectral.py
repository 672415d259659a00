"""Eigenbasis representation of the two elliptic operators and linear spectral ops.

Only constant-coefficient second-order operators ``-c * d^2/dxi^2`` on ``(0, L)``
with Dirichlet or Neumann boundary conditions are supported, so eigenpairs are
closed form: sine modes ``sqrt(2/L) sin(k pi xi / L)`` with eigenvalue
``c (k pi / L)^2`` for Dirichlet, cosine modes (including the constant mode)
for Neumann. The fast operator must be strictly dissipative; a Neumann fast
basis therefore takes a positive mass shift.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import BasisMismatchError, ConfigError


class BoundaryCondition(str, Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


class Component(str, Enum):
    SLOW = "slow"
    FAST = "fast"


@dataclass(frozen=True)
class DomainSpec:
    """Interval (0, length) with one boundary condition per component."""

    length: float
    bc_slow: BoundaryCondition = BoundaryCondition.DIRICHLET
    bc_fast: BoundaryCondition = BoundaryCondition.DIRICHLET

    def __post_init__(self):
        if self.length <= 0:
            raise ConfigError(f"domain length must be positive, got {self.length}")

    def bc(self, component: Component) -> BoundaryCondition:
        return self.bc_slow if component == Component.SLOW else self.bc_fast


@dataclass(frozen=True)
class SpectralBasis:
    """Orthonormal eigenbasis of one elliptic operator, truncated to n modes."""

    component: Component
    n: int
    eigenvalues: np.ndarray  # ascending, strictly positive for the fast operator
    basis_kind: str  # "sine" or "cosine"
    sup_norm_bound: float
    length: float
    coefficient: float = 1.0
    mass_shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", np.asarray(self.eigenvalues, dtype=float))

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])

    def semigroup_factors(self, t: float) -> np.ndarray:
        return np.exp(-self.eigenvalues * t)

    def eval_matrix(self, points: np.ndarray) -> np.ndarray:
        """Mode values at given points, shape (len(points), n)."""
        points = np.asarray(points, dtype=float)
        L = self.length
        if self.basis_kind == "sine":
            k = np.arange(1, self.n + 1)
            return np.sqrt(2.0 / L) * np.sin(np.outer(points, k * np.pi / L))
        k = np.arange(self.n)
        out = np.cos(np.outer(points, k * np.pi / L)) * np.sqrt(2.0 / L)
        out[:, 0] = np.sqrt(1.0 / L)
        return out

    def same_as(self, other: "SpectralBasis") -> bool:
        return (
            self.component == other.component
            and self.n == other.n
            and self.basis_kind == other.basis_kind
            and self.length == other.length
            and np.array_equal(self.eigenvalues, other.eigenvalues)
        )


def build_basis(
    domain: DomainSpec,
    component: Component,
    n: int,
    coefficient: float = 1.0,
    mass_shift: float = 0.0,
) -> SpectralBasis:
    """Closed-form eigenpairs of ``-coefficient * d^2/dxi^2 + mass_shift``.

    The fast basis is rejected unless its smallest eigenvalue is strictly
    positive (a Neumann fast operator needs ``mass_shift > 0``).
    """
    if n < 1:
        raise ConfigError(f"mode count must be >= 1, got {n}")
    if coefficient <= 0:
        raise ConfigError("operator coefficient must be positive")
    component = Component(component)
    bc = domain.bc(component)
    L = domain.length
    if bc == BoundaryCondition.DIRICHLET:
        k = np.arange(1, n + 1)
        eigs = coefficient * (k * np.pi / L) ** 2 + mass_shift
        kind = "sine"
    else:
        k = np.arange(n)
        eigs = coefficient * (k * np.pi / L) ** 2 + mass_shift
        kind = "cosine"
    if component == Component.FAST and eigs[0] <= 0:
        raise ConfigError(
            "fast operator must be strictly dissipative: smallest eigenvalue "
            f"{eigs[0]} <= 0 (add a positive mass_shift)"
        )
    if mass_shift < 0 and eigs[0] <= 0 and component == Component.SLOW and bc == BoundaryCondition.DIRICHLET:
        raise ConfigError("negative mass shift made the slow operator non-dissipative")
    return SpectralBasis(
        component=component,
        n=n,
        eigenvalues=eigs,
        basis_kind=kind,
        sup_norm_bound=float(np.sqrt(2.0 / L)),
        length=L,
        coefficient=coefficient,
        mass_shift=mass_shift,
    )


@dataclass
class Field:
    """Coefficient vector of an L2(0, L) function in a fixed eigenbasis."""

    coeffs: np.ndarray
    basis: SpectralBasis

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape[-1] != self.basis.n:
            raise BasisMismatchError(
                f"field has {self.coeffs.shape[-1]} coefficients, basis has {self.basis.n} modes"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def copy(self) -> "Field":
        return Field(self.coeffs.copy(), self.basis)

    def __add__(self, other: "Field") -> "Field":
        check_basis(self, other.basis)
        return Field(self.coeffs + other.coeffs, self.basis)

    def __sub__(self, other: "Field") -> "Field":
        check_basis(self, other.basis)
        return Field(self.coeffs - other.coeffs, self.basis)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.coeffs * scalar, self.basis)

    __rmul__ = __mul__


def check_basis(x: Field, basis: SpectralBasis) -> None:
    if not x.basis.same_as(basis):
        raise BasisMismatchError(
            f"field on {x.basis.component.value}/{x.basis.basis_kind} basis used with "
            f"{basis.component.value}/{basis.basis_kind} operator"
        )


def unit_mode(basis: SpectralBasis, k: int) -> Field:
    """k-th basis vector as a Field (k is 1-based for sine, 0-based never used here)."""
    coeffs = np.zeros(basis.n)
    coeffs[k - 1] = 1.0
    return Field(coeffs, basis)


def apply_semigroup(basis: SpectralBasis, t: float, x: Field) -> Field:
    """Heat semigroup of the operator: coefficient k scaled by exp(-a_k t)."""
    if t < 0:
        raise ConfigError(f"semigroup time must be nonnegative, got {t}")
    check_basis(x, basis)
    return Field(x.coeffs * basis.semigroup_factors(t), basis)


def sobolev_norm(basis: SpectralBasis, theta: float, x: Field) -> float:
    """Fractional graph norm (sum_k a_k^theta c_k^2)^(1/2); theta=0 is the L2 norm."""
    if theta < 0:
        raise ConfigError(f"fractional order must be nonnegative, got {theta}")
    check_basis(x, basis)
    weights = np.power(basis.eigenvalues, theta)
    return float(np.sqrt(np.sum(weights * x.coeffs**2)))


def project_modes(x: Field, m: int) -> Field:
    """Orthogonal projection onto the first m modes (coefficients above m zeroed)."""
    if not 1 <= m <= x.basis.n:
        raise ConfigError(f"projection dimension {m} outside [1, {x.basis.n}]")
    coeffs = x.coeffs.copy()
    coeffs[m:] = 0.0
    return Field(coeffs, x.basis)


def smoothing_constant(theta: float) -> float:
    """Sharp bound on sup_a (a t)^(theta/2) exp(-a t), uniform in t."""
    if theta == 0:
        return 1.0
    return float((theta / (2.0 * np.e)) ** (theta / 2.0))

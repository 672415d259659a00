"""Reaction and diffusion catalog, pointwise (Nemytskii) operators, hypothesis checks.

Reaction terms are drawn from a closed catalog of scalar families with
closed-form derivative bounds, so every structural constant (lambda, L_g,
ell, omega, sigma bounds) is analytic. Evaluation is pseudo-spectral:
synthesize on a uniform midpoint collocation grid, apply the scalar function
pointwise, analyze back to coefficients. The midpoint grid makes the discrete
sine/cosine transforms exactly orthogonal for every retained mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import BasisMismatchError, ConfigError, HypothesisError
from .spectral import Component, DomainSpec, Field, SpectralBasis, check_basis

_TANH2_MAX = 4.0 / (3.0 * np.sqrt(3.0))  # sup |d/dz sech^2(z)| = sup |2 sech^2 tanh|


class ReactionFamily(str, Enum):
    ZERO = "zero"
    LINEAR_Y = "linear_y"
    TANH_SUM = "tanh_sum"
    TANH_Y_DAMPED = "tanh_y_damped"


@dataclass(frozen=True)
class ReactionSpec:
    """One scalar reaction term f(xi, x, y) from the parametric catalog.

    zero:           f = 0
    linear_y(b):    f = b * y          (unbounded value, admitted for oracles)
    tanh_sum(a, b): f = tanh(a x) + b tanh(y)
    tanh_y_damped(k): f = -k tanh(y)
    """

    family: ReactionFamily
    b: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    kappa: float = 0.0

    def value(self, x, y):
        fam = self.family
        if fam == ReactionFamily.ZERO:
            return np.zeros(np.broadcast(x, y).shape)
        if fam == ReactionFamily.LINEAR_Y:
            return self.b * np.asarray(y) + 0.0 * np.asarray(x)
        if fam == ReactionFamily.TANH_SUM:
            return np.tanh(self.alpha * np.asarray(x)) + self.beta * np.tanh(y)
        return -self.kappa * np.tanh(y) + 0.0 * np.asarray(x)

    def dx(self, x, y):
        fam = self.family
        if fam == ReactionFamily.TANH_SUM:
            return self.alpha / np.cosh(self.alpha * np.asarray(x)) ** 2 + 0.0 * np.asarray(y)
        return np.zeros(np.broadcast(x, y).shape)

    def dy(self, x, y):
        fam = self.family
        if fam == ReactionFamily.LINEAR_Y:
            return np.full(np.broadcast(x, y).shape, self.b)
        if fam == ReactionFamily.TANH_SUM:
            return self.beta / np.cosh(np.asarray(y)) ** 2 + 0.0 * np.asarray(x)
        if fam == ReactionFamily.TANH_Y_DAMPED:
            return -self.kappa / np.cosh(np.asarray(y)) ** 2 + 0.0 * np.asarray(x)
        return np.zeros(np.broadcast(x, y).shape)

    def dxx(self, x, y):
        fam = self.family
        if fam == ReactionFamily.TANH_SUM:
            a = self.alpha
            ax = a * np.asarray(x)
            return -2.0 * a * a * np.tanh(ax) / np.cosh(ax) ** 2 + 0.0 * np.asarray(y)
        return np.zeros(np.broadcast(x, y).shape)

    # --- analytic bounds -------------------------------------------------
    @property
    def dx_bound(self) -> float:
        if self.family == ReactionFamily.TANH_SUM:
            return abs(self.alpha)
        return 0.0

    @property
    def dy_bound(self) -> float:
        if self.family == ReactionFamily.LINEAR_Y:
            return abs(self.b)
        if self.family == ReactionFamily.TANH_SUM:
            return abs(self.beta)
        if self.family == ReactionFamily.TANH_Y_DAMPED:
            return abs(self.kappa)
        return 0.0

    @property
    def dxx_bound(self) -> float:
        if self.family == ReactionFamily.TANH_SUM:
            return _TANH2_MAX * self.alpha**2
        return 0.0

    @property
    def dyy_bound(self) -> float:
        if self.family == ReactionFamily.TANH_SUM:
            return _TANH2_MAX * abs(self.beta)
        if self.family == ReactionFamily.TANH_Y_DAMPED:
            return _TANH2_MAX * abs(self.kappa)
        return 0.0

    @property
    def value_bounded(self) -> bool:
        return self.family != ReactionFamily.LINEAR_Y

    @property
    def dy_is_constant(self) -> bool:
        """True when d_y f does not depend on the state (linear or zero families)."""
        if self.family in (ReactionFamily.ZERO, ReactionFamily.LINEAR_Y):
            return True
        if self.family == ReactionFamily.TANH_SUM:
            return self.beta == 0.0
        return self.kappa == 0.0

    @property
    def value_bound(self) -> float:
        if self.family == ReactionFamily.ZERO:
            return 0.0
        if self.family == ReactionFamily.TANH_SUM:
            return 1.0 + abs(self.beta)
        if self.family == ReactionFamily.TANH_Y_DAMPED:
            return abs(self.kappa)
        return float("inf")


def reaction(family, **params) -> ReactionSpec:
    """Catalog constructor with per-family parameter validation."""
    family = ReactionFamily(family)
    allowed = {
        ReactionFamily.ZERO: set(),
        ReactionFamily.LINEAR_Y: {"b"},
        ReactionFamily.TANH_SUM: {"alpha", "beta"},
        ReactionFamily.TANH_Y_DAMPED: {"kappa"},
    }[family]
    extra = set(params) - allowed
    if extra:
        raise ConfigError(f"reaction family {family.value} does not take parameters {sorted(extra)}")
    return ReactionSpec(family=family, **params)


class DiffusionFamily(str, Enum):
    CONSTANT = "constant"
    BOUNDED_SIGMOID = "bounded_sigmoid"


@dataclass(frozen=True)
class DiffusionSpec:
    """Noise multiplier sigma(xi, x, y), pinched between positive bounds.

    constant(c):             sigma = c
    bounded_sigmoid(c1, c2): sigma = c1 + (c2 - c1) * logistic(x + y)
    """

    family: DiffusionFamily
    c: float = 1.0
    c1: float = 0.0
    c2: float = 0.0

    def value(self, x, y):
        if self.family == DiffusionFamily.CONSTANT:
            return np.full(np.broadcast(x, y).shape, self.c)
        s = np.asarray(x) + np.asarray(y)
        return self.c1 + (self.c2 - self.c1) / (1.0 + np.exp(-s))

    @property
    def lower(self) -> float:
        return self.c if self.family == DiffusionFamily.CONSTANT else self.c1

    @property
    def upper(self) -> float:
        return self.c if self.family == DiffusionFamily.CONSTANT else self.c2

    @property
    def lipschitz(self) -> float:
        if self.family == DiffusionFamily.CONSTANT:
            return 0.0
        # logistic' <= 1/4 in each scalar argument
        return (self.c2 - self.c1) * np.sqrt(2.0) / 4.0

    @property
    def is_constant(self) -> bool:
        return self.family == DiffusionFamily.CONSTANT


def diffusion(family, **params) -> DiffusionSpec:
    family = DiffusionFamily(family)
    if family == DiffusionFamily.CONSTANT:
        extra = set(params) - {"c"}
        if extra:
            raise ConfigError(f"constant diffusion does not take parameters {sorted(extra)}")
        spec = DiffusionSpec(family=family, **params)
        if spec.c <= 0:
            raise ConfigError("constant diffusion level must be positive")
        return spec
    extra = set(params) - {"c1", "c2"}
    if extra:
        raise ConfigError(f"bounded_sigmoid diffusion does not take parameters {sorted(extra)}")
    spec = DiffusionSpec(family=family, **params)
    if not 0 < spec.c1 <= spec.c2:
        raise ConfigError(f"bounded_sigmoid needs 0 < c1 <= c2, got ({spec.c1}, {spec.c2})")
    return spec


class WhichReaction(str, Enum):
    F = "F"
    G = "G"


class WhichDerivative(str, Enum):
    DXF = "DxF"
    DYF = "DyF"
    DXG = "DxG"
    DYG = "DyG"
    DXXF = "DxxF"


@dataclass
class ModelSpec:
    """Full discrete model: domain, bases, reactions, diffusion, collocation grid."""

    domain: DomainSpec
    basis_slow: SpectralBasis
    basis_fast: SpectralBasis
    f: ReactionSpec
    g: ReactionSpec
    sigma: DiffusionSpec
    quad_points: int = 0

    def __post_init__(self):
        n_max = max(self.basis_slow.n, self.basis_fast.n)
        if self.quad_points == 0:
            self.quad_points = 2 * n_max + 1
        if self.quad_points < 2 * n_max + 1:
            raise ConfigError(
                f"quad_points={self.quad_points} must be >= 2*modes+1 = {2 * n_max + 1}"
            )
        L = self.domain.length
        Q = self.quad_points
        self.grid = (np.arange(Q) + 0.5) * L / Q
        self.weight = L / Q
        # synthesis: coeffs -> grid values; analysis: grid values -> coeffs
        self.synth_slow = self.basis_slow.eval_matrix(self.grid)
        self.synth_fast = self.basis_fast.eval_matrix(self.grid)
        self.analysis_slow = self.weight * self.synth_slow.T
        self.analysis_fast = self.weight * self.synth_fast.T

    @property
    def n_slow(self) -> int:
        return self.basis_slow.n

    @property
    def n_fast(self) -> int:
        return self.basis_fast.n

    def synthesize(self, coeffs: np.ndarray, component: Component) -> np.ndarray:
        mat = self.synth_slow if component == Component.SLOW else self.synth_fast
        return np.asarray(coeffs) @ mat.T

    def analyze(self, values: np.ndarray, component: Component) -> np.ndarray:
        mat = self.analysis_slow if component == Component.SLOW else self.analysis_fast
        return np.asarray(values) @ mat.T

    def grid_inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Quadrature of the pointwise product over (0, L)."""
        return self.weight * np.sum(a * b, axis=-1)


def build_model(domain, basis_slow, basis_fast, f, g, sigma, quad_points=0) -> ModelSpec:
    return ModelSpec(domain, basis_slow, basis_fast, f, g, sigma, quad_points)


@dataclass
class HypothesisReport:
    """Structural constants and pass/fail flags derived from a model."""

    lam: float
    L_g: float
    ell: float
    omega: float
    sigma_lower: float
    sigma_upper: float
    sigma_lipschitz: float
    dissipativity_ok: bool  # L_g < lambda
    strong_dissipativity_ok: bool  # omega > 0
    sigma_bounds_ok: bool  # 0 < c1 <= c2 < inf
    f_bounded: bool  # warning only, never blocks
    f_bounds: dict = field(default_factory=dict)

    @property
    def overall_pass(self) -> bool:
        return self.dissipativity_ok and self.strong_dissipativity_ok and self.sigma_bounds_ok

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "L_g": self.L_g,
            "ell": self.ell,
            "omega": self.omega,
            "sigma_lower": self.sigma_lower,
            "sigma_upper": self.sigma_upper,
            "sigma_lipschitz": self.sigma_lipschitz,
            "dissipativity_ok": self.dissipativity_ok,
            "strong_dissipativity_ok": self.strong_dissipativity_ok,
            "sigma_bounds_ok": self.sigma_bounds_ok,
            "f_bounded": self.f_bounded,
            "f_bounds": self.f_bounds,
            "overall_pass": self.overall_pass,
        }


def validate_hypotheses(model: ModelSpec) -> HypothesisReport:
    """Compute lambda, L_g, ell, omega and all pass/fail flags.

    Failures are reported, never raised; operations that require a passing
    report call :func:`require_hypotheses`.
    """
    lam = model.basis_fast.min_eigenvalue
    L_g = model.g.dy_bound
    ell = (lam - L_g) / 2.0
    omega = (lam - 3.0 * L_g) / 2.0
    return HypothesisReport(
        lam=lam,
        L_g=L_g,
        ell=ell,
        omega=omega,
        sigma_lower=model.sigma.lower,
        sigma_upper=model.sigma.upper,
        sigma_lipschitz=model.sigma.lipschitz,
        dissipativity_ok=L_g < lam,
        strong_dissipativity_ok=omega > 0,
        sigma_bounds_ok=0 < model.sigma.lower <= model.sigma.upper < float("inf"),
        f_bounded=model.f.value_bounded,
        f_bounds={
            "dx": model.f.dx_bound,
            "dy": model.f.dy_bound,
            "dxx": model.f.dxx_bound,
            "dyy": model.f.dyy_bound,
        },
    )


def require_hypotheses(model: ModelSpec, need_omega: bool = False) -> HypothesisReport:
    report = validate_hypotheses(model)
    if not report.dissipativity_ok:
        raise HypothesisError(
            f"fast drift is not dissipative: L_g={report.L_g} >= lambda={report.lam}", report
        )
    if need_omega and not report.strong_dissipativity_ok:
        raise HypothesisError(f"omega={report.omega} <= 0", report)
    return report


def _operand_grids(model: ModelSpec, x: Field, y: Field):
    check_basis(x, model.basis_slow)
    check_basis(y, model.basis_fast)
    return model.synthesize(x.coeffs, Component.SLOW), model.synthesize(y.coeffs, Component.FAST)


def eval_reaction(model: ModelSpec, which: WhichReaction, x: Field, y: Field) -> Field:
    """F(x, y) on the slow basis or G(x, y) on the fast basis."""
    which = WhichReaction(which)
    xg, yg = _operand_grids(model, x, y)
    spec = model.f if which == WhichReaction.F else model.g
    values = spec.value(xg, yg)
    if which == WhichReaction.F:
        return Field(model.analyze(values, Component.SLOW), model.basis_slow)
    return Field(model.analyze(values, Component.FAST), model.basis_fast)


def eval_derivative(
    model: ModelSpec,
    which: WhichDerivative,
    x: Field,
    y: Field,
    chi: Field,
    chi2: Optional[Field] = None,
) -> Field:
    """Directional derivative of F or G: pointwise multiplier times chi.

    The second x-derivative DxxF takes two directions and returns the
    bilinear image. Output lives on the slow basis for F-derivatives and on
    the fast basis for G-derivatives; chi may live on either basis.
    """
    which = WhichDerivative(which)
    xg, yg = _operand_grids(model, x, y)
    chig = model.synthesize(chi.coeffs, chi.basis.component)
    if which == WhichDerivative.DXXF:
        if chi2 is None:
            raise ConfigError("DxxF needs a second direction chi2")
        chi2g = model.synthesize(chi2.coeffs, chi2.basis.component)
        values = model.f.dxx(xg, yg) * chig * chi2g
        return Field(model.analyze(values, Component.SLOW), model.basis_slow)
    if chi2 is not None:
        raise ConfigError(f"{which.value} takes a single direction")
    if which == WhichDerivative.DXF:
        mult, comp = model.f.dx(xg, yg), Component.SLOW
    elif which == WhichDerivative.DYF:
        mult, comp = model.f.dy(xg, yg), Component.SLOW
    elif which == WhichDerivative.DXG:
        mult, comp = model.g.dx(xg, yg), Component.FAST
    else:
        mult, comp = model.g.dy(xg, yg), Component.FAST
    return Field(model.analyze(mult * chig, comp), model.basis_slow if comp == Component.SLOW else model.basis_fast)


def apply_sigma(model: ModelSpec, x: Field, y: Field, u: Field) -> Field:
    """Multiplication operator sigma(xi, x(xi), y(xi)) applied to u, on the slow basis."""
    if model.sigma.is_constant:
        check_basis(u, model.basis_slow)
        return Field(model.sigma.c * u.coeffs, model.basis_slow)
    xg, yg = _operand_grids(model, x, y)
    ug = model.synthesize(u.coeffs, u.basis.component)
    values = model.sigma.value(xg, yg) * ug
    return Field(model.analyze(values, Component.SLOW), model.basis_slow)


def sigma_gram(model: ModelSpec, x_grid: np.ndarray, y_grid: np.ndarray, m: int) -> np.ndarray:
    """m x m Gram matrix of Sigma Sigma^* on the slow basis: <sigma^2 e_j, e_k>."""
    s2 = model.sigma.value(x_grid, y_grid) ** 2
    B = model.synth_slow[:, :m]
    return model.weight * (B.T * s2) @ B


def averaged_dx_multiplier(model: ModelSpec, x_grid: np.ndarray, y_grids: np.ndarray) -> np.ndarray:
    """Grid function mean_samples of d_x f(xi, x(xi), y_s(xi))."""
    return model.f.dx(x_grid, y_grids).mean(axis=0)


def multiplier_matrix(model: ModelSpec, mult_grid: np.ndarray, m: int) -> np.ndarray:
    """Matrix of the multiplication operator by mult_grid on the first m slow modes."""
    B = model.synth_slow[:, :m]
    return model.weight * (B.T * mult_grid) @ B

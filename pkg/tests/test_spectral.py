import numpy as np
import pytest

from mdspde.errors import BasisMismatchError, ConfigError
from mdspde.spectral import (
    Component,
    DomainSpec,
    Field,
    apply_semigroup,
    build_basis,
    project_modes,
    smoothing_constant,
    sobolev_norm,
    unit_mode,
)


def test_dirichlet_eigenvalues_unit_interval():
    basis = build_basis(DomainSpec(length=np.pi), Component.SLOW, 3)
    assert np.allclose(basis.eigenvalues, [1.0, 4.0, 9.0])


def test_sup_norm_bound_is_sine_amplitude():
    basis = build_basis(DomainSpec(length=np.pi), Component.SLOW, 8)
    assert basis.sup_norm_bound == pytest.approx(np.sqrt(2 / np.pi), abs=1e-12)
    # the bound actually dominates the sampled mode values
    pts = np.linspace(0, np.pi, 1001)
    assert np.abs(basis.eval_matrix(pts)).max() <= basis.sup_norm_bound + 1e-12


def test_dirichlet_eigenvalues_scale_with_length():
    basis = build_basis(DomainSpec(length=2 * np.pi), Component.SLOW, 2)
    assert np.allclose(basis.eigenvalues, [0.25, 1.0])


def test_neumann_slow_has_constant_mode():
    dom = DomainSpec(length=np.pi, bc_slow="neumann")
    basis = build_basis(dom, Component.SLOW, 4)
    assert basis.eigenvalues[0] == 0.0
    assert np.allclose(basis.eigenvalues, [0.0, 1.0, 4.0, 9.0])


def test_neumann_fast_requires_mass_shift():
    dom = DomainSpec(length=np.pi, bc_fast="neumann")
    with pytest.raises(ConfigError):
        build_basis(dom, Component.FAST, 4)
    basis = build_basis(dom, Component.FAST, 4, mass_shift=0.5)
    assert basis.min_eigenvalue == 0.5


def test_rejects_nonpositive_mode_count():
    with pytest.raises(ConfigError):
        build_basis(DomainSpec(length=np.pi), Component.SLOW, 0)


def test_semigroup_identity_at_zero(basis_slow):
    x = Field(np.arange(1.0, basis_slow.n + 1), basis_slow)
    out = apply_semigroup(basis_slow, 0.0, x)
    assert np.array_equal(out.coeffs, x.coeffs)


def test_semigroup_scalar_factors(basis_slow):
    e1 = apply_semigroup(basis_slow, 0.5, unit_mode(basis_slow, 1))
    assert e1.coeffs[0] == pytest.approx(np.exp(-0.5), abs=1e-15)
    e2 = apply_semigroup(basis_slow, 0.5, unit_mode(basis_slow, 2))
    assert e2.coeffs[1] == pytest.approx(np.exp(-2.0), abs=1e-15)


def test_semigroup_composition_property(basis_slow):
    rng = np.random.default_rng(1)
    x = Field(rng.normal(size=basis_slow.n), basis_slow)
    for t, s in rng.uniform(0, 2, size=(20, 2)):
        once = apply_semigroup(basis_slow, t + s, x)
        twice = apply_semigroup(basis_slow, t, apply_semigroup(basis_slow, s, x))
        assert np.abs(once.coeffs - twice.coeffs).max() < 1e-12


def test_fast_semigroup_contraction(basis_fast):
    rng = np.random.default_rng(2)
    lam = basis_fast.min_eigenvalue
    for _ in range(100):
        x = Field(rng.normal(size=basis_fast.n), basis_fast)
        for t in (0.1, 0.7, 2.0):
            assert apply_semigroup(basis_fast, t, x).norm() <= np.exp(-lam * t) * x.norm() + 1e-14


def test_sobolev_norm_values(basis_slow):
    x = Field(np.r_[3.0, 4.0, np.zeros(basis_slow.n - 2)], basis_slow)
    assert sobolev_norm(basis_slow, 0.0, x) == pytest.approx(5.0, abs=1e-14)
    assert sobolev_norm(basis_slow, 1.0, unit_mode(basis_slow, 1)) == pytest.approx(1.0)
    assert sobolev_norm(basis_slow, 1.0, unit_mode(basis_slow, 2)) == pytest.approx(2.0)


def test_sobolev_norm_rejects_negative_order(basis_slow):
    with pytest.raises(ConfigError):
        sobolev_norm(basis_slow, -0.5, unit_mode(basis_slow, 1))


def test_semigroup_smoothing_bound(basis_slow):
    # sobolev_norm(theta, S(t) x) <= (theta / 2e)^(theta/2) t^(-theta/2) ||x||
    rng = np.random.default_rng(3)
    for theta in (0.25, 0.5, 1.0):
        C = smoothing_constant(theta)
        for _ in range(50):
            x = Field(rng.normal(size=basis_slow.n), basis_slow)
            for t in (0.05, 0.3, 1.0):
                smoothed = apply_semigroup(basis_slow, t, x)
                assert sobolev_norm(basis_slow, theta, smoothed) <= C * t ** (-theta / 2) * x.norm() + 1e-12


def test_projection_truncates(basis_slow):
    x = Field(np.r_[1.0, 2.0, 3.0, np.zeros(basis_slow.n - 3)], basis_slow)
    out = project_modes(x, 2)
    assert np.allclose(out.coeffs[:3], [1.0, 2.0, 0.0])


def test_projection_full_is_identity(basis_slow):
    rng = np.random.default_rng(4)
    x = Field(rng.normal(size=basis_slow.n), basis_slow)
    assert np.array_equal(project_modes(x, basis_slow.n).coeffs, x.coeffs)


def test_projection_is_idempotent_contraction(basis_slow):
    rng = np.random.default_rng(5)
    for _ in range(1000):
        x = Field(rng.normal(size=basis_slow.n), basis_slow)
        m = int(rng.integers(1, basis_slow.n + 1))
        p = project_modes(x, m)
        assert np.array_equal(project_modes(p, m).coeffs, p.coeffs)
        assert p.norm() <= x.norm() + 1e-15


def test_projection_range_check(basis_slow):
    x = unit_mode(basis_slow, 1)
    with pytest.raises(ConfigError):
        project_modes(x, 0)
    with pytest.raises(ConfigError):
        project_modes(x, basis_slow.n + 1)


def test_basis_mismatch_detected(basis_slow, basis_fast):
    x = unit_mode(basis_slow, 1)
    with pytest.raises(BasisMismatchError):
        apply_semigroup(basis_fast, 0.1, x)


def test_negative_time_rejected(basis_slow):
    with pytest.raises(ConfigError):
        apply_semigroup(basis_slow, -0.1, unit_mode(basis_slow, 1))

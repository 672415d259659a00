"""Acceptance suite: every criterion at its stated tolerance, one PASS line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
summary lines. Desk scale throughout: 16 modes, horizon 1.
"""

import json
import os
import time

import numpy as np
import pytest
from scipy.stats import norm

from mdspde.averaging import InvariantPolicy, sample_invariant, solve_averaged
from mdspde.cli import main as cli_main
from mdspde.dynamics import (
    SlowFastEngine,
    make_regime,
    simulate_first_variation,
    simulate_frozen_fast,
    simulate_slow_fast_batch,
    zero_control,
)
from mdspde.kolmogorov import Psi2Config, psi2_zero_matrix
from mdspde.mdp import (
    QPolicy,
    RateEvaluator,
    SmoothPath,
    control_cost,
    optimal_controls,
    q_matrix,
    solve_limit_equation,
)
from mdspde.model import build_model, diffusion, reaction, validate_hypotheses
from mdspde.occupation import build_occupation, decoupling_test
from mdspde.rare_event import (
    EventSpec,
    SearchConfig,
    estimate_importance,
    estimate_plain,
    mdp_asymptote,
)
from mdspde.spectral import Component, DomainSpec, Field, apply_semigroup, build_basis

from conftest import unit, zero

LIN_Q11 = 1.09


def report(name, elapsed, detail=""):
    print(f"\nACCEPTANCE PASS {name} [{elapsed:.2f}s] {detail}")


def test_criterion_01_spectral_exactness(basis_slow):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    x = Field(rng.normal(size=basis_slow.n), basis_slow)
    worst = 0.0
    for t in (0.1, 0.5, 1.0):
        out = apply_semigroup(basis_slow, t, x)
        exact = np.exp(-basis_slow.eigenvalues * t) * x.coeffs
        worst = max(worst, np.abs(out.coeffs - exact).max())
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-12
    assert elapsed < 1.0
    report("1 spectral exactness", elapsed, f"max dev {worst:.2e}")


def test_criterion_02_ou_invariant_measure(noise_model):
    t0 = time.perf_counter()
    n = 100_000
    inv = sample_invariant(noise_model, zero(noise_model.basis_slow), count=n, dt=0.02, seed=202)
    worst_z = 0.0
    for k in range(1, 9):
        target = 1.0 / (2.0 * k**2)
        se = target * np.sqrt(2.0 / n)
        dev = abs(inv.samples[:, k - 1].var(ddof=1) - target)
        worst_z = max(worst_z, dev / se)
        assert dev < 3.0 * se, f"mode {k}: dev {dev:.3e} vs 3 SE {3 * se:.3e}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    report("2 OU invariant measure", elapsed, f"worst |z| {worst_z:.2f} over modes 1..8")


def test_criterion_03_psi2_closed_form(lin_model):
    t0 = time.perf_counter()
    res = psi2_zero_matrix(lin_model, zero(lin_model.basis_slow), zero(lin_model.basis_fast),
                           m=8, mc_paths=2, t_max=20.0, dt=1e-3, seed=303)
    diag = np.diag(res.entries)
    target = 0.3 / np.arange(1, 9) ** 2
    diag_err = np.abs(diag - target).max()
    off = np.abs(res.entries - np.diag(diag)).max()
    elapsed = time.perf_counter() - t0
    assert diag_err <= 1e-4
    assert off <= 1e-12
    assert elapsed < 10.0
    report("3 psi2 closed form", elapsed, f"diag err {diag_err:.2e}, offdiag {off:.2e}")


def test_criterion_04_first_variation_bound(domain, basis_slow, basis_fast):
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    for trial in range(100):
        c_fast = float(rng.uniform(0.5, 2.0))
        bf = build_basis(domain, Component.FAST, basis_fast.n, coefficient=c_fast)
        lam = bf.min_eigenvalue
        kappa = float(rng.uniform(0.0, 0.3 * lam))
        g = reaction("tanh_y_damped", kappa=kappa) if kappa > 1e-3 else reaction("zero")
        model = build_model(domain, basis_slow, bf, reaction("zero"), g, diffusion("constant", c=1.0))
        rep = validate_hypotheses(model)
        assert rep.overall_pass
        y0 = Field(rng.normal(size=bf.n), bf)
        v = Field(rng.normal(size=bf.n), bf)
        y_path = simulate_frozen_fast(model, zero(basis_slow), y0, 2.0, 0.01, seed=500 + trial)
        Z = simulate_first_variation(model, zero(basis_slow), y_path, v, 0.01)
        norms = np.linalg.norm(Z.Z, axis=1)
        bound = np.exp(-rep.ell * y_path.t) * v.norm() * (1.0 + 1e-6)
        assert (norms <= bound).all(), f"trial {trial}: bound violated"
    elapsed = time.perf_counter() - t0
    report("4 first-variation bound", elapsed, "100 random (model, v) draws")


@pytest.fixture(scope="module")
def lin_xbar_fine(lin_model):
    return solve_averaged(lin_model, zero(lin_model.basis_slow), 1.0, 1e-3,
                          InvariantPolicy(count=256, seed=550))


@pytest.fixture(scope="module")
def qp_acc():
    return QPolicy(psi2=Psi2Config(mc_paths=1, t_max=20.0, dt=1e-3), mu_samples=4,
                   inv=InvariantPolicy(count=32, seed=551))


def test_criterion_05_rate_closed_form(lin_model, lin_xbar_fine, qp_acc):
    t0 = time.perf_counter()
    psi = SmoothPath.linear_mode(lin_model.basis_slow, 1.0, 1e-4, 1, 1.0)
    r1 = make_regime(0.04, "R1")
    S1 = RateEvaluator(lin_model, r1, lin_xbar_fine, psi.t).rate(psi).S
    err1 = abs(S1 - 7.0 / 6.0)
    r2 = make_regime(0.04, "R2", gamma=1.0)
    S2 = RateEvaluator(lin_model, r2, lin_xbar_fine, psi.t, qp_acc).rate(psi).S
    err2 = abs(S2 - (7.0 / 6.0) / LIN_Q11)
    elapsed = time.perf_counter() - t0
    assert err1 <= 1e-6, f"S1 error {err1:.2e}"
    assert err2 <= 1e-4, f"S2 error {err2:.2e}"
    assert elapsed < 5.0
    report("5 rate closed form", elapsed, f"S1 err {err1:.2e}, S2 err {err2:.2e}")


def test_criterion_06_optimality_consistency(lin_model, lin_xbar_fine, qp_acc):
    t0 = time.perf_counter()
    psi = SmoothPath.linear_mode(lin_model.basis_slow, 1.0, 1e-4, 1, 1.0)
    details = []
    for regime in (make_regime(0.04, "R1"), make_regime(0.04, "R2", gamma=1.0)):
        ev = RateEvaluator(lin_model, regime, lin_xbar_fine, psi.t, qp_acc)
        rate = ev.rate(psi).S
        ctrl = optimal_controls(lin_model, regime, psi, lin_xbar_fine, qp_acc, evaluator=ev)
        cost = control_cost(lin_model, regime, ctrl, lin_xbar_fine, qp_acc.inv, grid_t=psi.t)
        gap = abs(cost.cost - rate)
        assert gap <= 1e-6, f"{regime.regime}: cost-rate gap {gap:.2e}"
        sol = solve_limit_equation(lin_model, regime, ctrl, lin_xbar_fine, 1.0, 1e-4,
                                   qp_acc.inv, qp_acc.psi2)
        sup_err = np.abs(sol.path.values - psi.values).max()
        assert sup_err <= 1e-3, f"{regime.regime}: round trip {sup_err:.2e}"
        details.append(f"{regime.regime}: gap {gap:.1e}, roundtrip {sup_err:.1e}")
    elapsed = time.perf_counter() - t0
    report("6 optimality consistency", elapsed, "; ".join(details))


def test_criterion_07_q_bounds(sigmoid_model):
    t0 = time.perf_counter()
    reg = make_regime(0.04, "R1")
    c1 = sigmoid_model.sigma.lower
    rng = np.random.default_rng(707)
    inv = sample_invariant(sigmoid_model, zero(sigmoid_model.basis_slow), count=64, dt=0.02, seed=708)
    worst_eig, worst_inv = np.inf, 0.0
    for _ in range(20):
        x = Field(rng.normal(size=sigmoid_model.n_slow), sigmoid_model.basis_slow)
        qm = q_matrix(sigmoid_model, reg, x, inv, m=16)
        se = 3.0 * np.linalg.norm(qm.se, 2)
        assert qm.min_eigenvalue >= c1**2 - se - 1e-12
        assert qm.inverse_norm() <= 1.0 / c1**2 + se / c1**4 + 1e-9
        worst_eig = min(worst_eig, qm.min_eigenvalue)
        worst_inv = max(worst_inv, qm.inverse_norm())
    elapsed = time.perf_counter() - t0
    report("7 Q bounds", elapsed,
           f"min eig {worst_eig:.4f} >= c1^2 {c1**2:.4f}; max ||Q^-1|| {worst_inv:.4f} <= {1 / c1**2:.4f}")


def test_criterion_08_averaging_trend(bnd_model):
    t0 = time.perf_counter()
    sups = []
    for eps in (0.1, 0.05, 0.025):
        reg = make_regime(eps, "R1")
        dt = reg.delta / 10.0
        xbar = solve_averaged(bnd_model, zero(bnd_model.basis_slow), 1.0, dt,
                              InvariantPolicy(count=256, seed=808))
        eng = SlowFastEngine(bnd_model, reg, zero_control(),
                             np.zeros(bnd_model.n_slow), np.zeros(bnd_model.n_fast),
                             dt, seed=809, n_paths=200)
        sup = np.linalg.norm(eng.X - xbar.X[0][None, :], axis=1)
        for k in range(len(xbar.t) - 1):
            eng.step()
            sup = np.maximum(sup, np.linalg.norm(eng.X - xbar.X[k + 1][None, :], axis=1))
        sups.append(float(sup.mean()))
    elapsed = time.perf_counter() - t0
    assert sups[0] > sups[1] > sups[2], f"not strictly decreasing: {sups}"
    assert elapsed < 300.0
    report("8 averaging trend", elapsed, f"E sup ||X-Xbar|| = {[round(s, 4) for s in sups]}")


def test_criterion_09_occupation_decoupling(lin_model):
    t0 = time.perf_counter()
    reg = make_regime(0.01, "R1")
    dt = 2e-6  # resolves the fast marginal at modes <= 4
    n_seeds = 20
    T = 1.0
    bundles = simulate_slow_fast_batch(
        lin_model, reg, zero_control(),
        zero(lin_model.basis_slow), zero(lin_model.basis_fast),
        T + reg.Delta_occ, dt, seed=909, n_paths=n_seeds, store_stride=50,
    )
    xbar = solve_averaged(lin_model, zero(lin_model.basis_slow), T + reg.Delta_occ, 1e-3,
                          InvariantPolicy(count=128, seed=910))
    passed = total = 0
    for i, bundle in enumerate(bundles):
        occ = build_occupation(bundle, reg)
        rep = decoupling_test(occ, lin_model, xbar, reg, modes_checked=4, seed=911 + 37 * i,
                              windows=4, ref_count=2000)
        assert rep.scaling_ok
        passed += sum(c.passed for c in rep.cells)
        total += len(rep.cells)
    frac = passed / total
    # negative control: stencil window equal to the time-scale parameter
    occ_bad = build_occupation(bundles[0], reg, Delta=reg.delta)
    rep_bad = decoupling_test(occ_bad, lin_model, xbar, reg, modes_checked=4, seed=999,
                              windows=4, ref_count=500)
    elapsed = time.perf_counter() - t0
    assert frac >= 0.95, f"pass fraction {frac:.3f} < 0.95"
    assert rep_bad.diagnostic >= 1.0
    assert rep_bad.pass_fraction == 0.0
    assert all(c.reason == "scaling" for c in rep_bad.cells)
    report("9 occupation decoupling", elapsed,
           f"pass fraction {frac:.3f} over {total} cells; negative-control diagnostic "
           f"{rep_bad.diagnostic:.1f} with reported failures")


def test_criterion_10_rare_event_gaussian(noise_model):
    t0 = time.perf_counter()
    reg = make_regime(0.05, "R1")
    dt = reg.delta / 10.0
    v1 = np.sqrt(0.05) * (1 - np.exp(-2.0)) / 2.0
    r = norm.ppf(1 - 5e-4) * np.sqrt(v1)  # two-sided p = 1e-3
    p_exact = 2 * (1 - norm.cdf(r / np.sqrt(v1)))
    ev = EventSpec("terminal_mode", r, 1)
    n = 10_000
    psi = SmoothPath.linear_mode(noise_model.basis_slow, 1.0, 1e-3, 1, r)
    plain = estimate_plain(noise_model, reg, ev, n, 1.0, dt, seed=1010)
    is_est = estimate_importance(noise_model, reg, ev, psi, n, 1.0, dt, seed=1011)
    se_plain = p_exact * plain.relative_error if plain.p_hat else p_exact
    se_is = is_est.p_hat * is_est.relative_error
    elapsed = time.perf_counter() - t0
    assert abs(plain.p_hat - p_exact) <= 3 * max(se_plain, np.sqrt(p_exact / n))
    assert abs(is_est.p_hat - p_exact) <= 3 * se_is
    assert is_est.relative_error <= 0.5 * plain.relative_error
    assert elapsed < 120.0
    report("10 rare-event Gaussian oracle", elapsed,
           f"p exact {p_exact:.3e}, plain {plain.p_hat:.3e} (rel {plain.relative_error:.2f}), "
           f"IS {is_est.p_hat:.3e} (rel {is_est.relative_error:.3f})")


def test_criterion_11_asymptote_algebra(lin_model, qp_acc):
    t0 = time.perf_counter()
    details = []
    for r in (0.5, 1.0):
        ev = EventSpec("terminal_mode", r, 1)
        res1 = mdp_asymptote(lin_model, make_regime(0.04, "R1"), ev,
                             SearchConfig(dt=1e-4, tol=1e-10))
        err1 = abs(res1.S - (7.0 / 6.0) * r**2)
        assert err1 <= 1e-6, f"R1 r={r}: err {err1:.2e}"
        res2 = mdp_asymptote(lin_model, make_regime(0.04, "R2", gamma=1.0), ev,
                             SearchConfig(dt=1e-4, tol=1e-10, q_policy=qp_acc))
        err2 = abs(res2.S - (7.0 / 6.0) * r**2 / LIN_Q11)
        assert err2 <= 1e-6, f"R2 r={r}: err {err2:.2e}"
        details.append(f"r={r}: R1 err {err1:.1e}, R2 err {err2:.1e}")
    elapsed = time.perf_counter() - t0
    report("11 asymptote algebra", elapsed, "; ".join(details))


def test_criterion_12_reproducibility(tmp_path):
    t0 = time.perf_counter()
    cfg_text = """[model]
length = 3.141592653589793
modes = 16
f_family = linear_y
f_b = 0.3
g_family = zero
sigma_family = constant
sigma_c = 1.0

[regime]
epsilon = 0.05
regime = R1

[run]
T = 0.5
seed = 4242

[output]
directory = {out}
"""
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        cfg = tmp_path / f"{run}.cfg"
        cfg.write_text(cfg_text.format(out=out))
        assert cli_main(["simulate", "--config", str(cfg), "--store-stride", "20"]) == 0
        assert cli_main(["estimate", "--config", str(cfg), "--event", "terminal_mode:1,0.6",
                         "--method", "plain", "--n", "500"]) == 0
        outputs.append({
            "bundle": (out / "bundle_seed4242.csv").read_bytes(),
            "estimate": (out / "estimate_plain_seed4242_n500.json").read_bytes(),
        })
    elapsed = time.perf_counter() - t0
    assert outputs[0]["bundle"] == outputs[1]["bundle"]
    assert outputs[0]["estimate"] == outputs[1]["estimate"]
    report("12 reproducibility", elapsed, "byte-identical bundle and estimate files")

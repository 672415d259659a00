import numpy as np
import pytest
from scipy.stats import norm

from mdspde.dynamics import make_regime, zero_control
from mdspde.errors import ConfigError
from mdspde.mdp import SmoothPath
from mdspde.rare_event import (
    EventSpec,
    SearchConfig,
    estimate_importance,
    estimate_plain,
    mdp_asymptote,
)

from conftest import zero

LIN_Q11 = 1.09


def eta_terminal_variance(eps, T=1.0, a=1.0):
    """Closed-form mode variance of the normalized deviation at time T."""
    return np.sqrt(eps) * (1 - np.exp(-2 * a * T)) / (2 * a)


def test_zero_level_certain(noise_model):
    reg = make_regime(0.05, "R1")
    est = estimate_plain(noise_model, reg, EventSpec("terminal_mode", 0.0, 1),
                         200, 0.2, reg.delta / 10, seed=1)
    assert est.p_hat == 1.0


def test_plain_matches_gaussian_tail(noise_model):
    reg = make_regime(0.05, "R1")
    r = 0.6
    v = eta_terminal_variance(0.05)
    p = 2 * (1 - norm.cdf(r / np.sqrt(v)))
    est = estimate_plain(noise_model, reg, EventSpec("terminal_mode", r, 1),
                         4000, 1.0, reg.delta / 10, seed=2)
    se = np.sqrt(p * (1 - p) / 4000)
    assert abs(est.p_hat - p) < 3 * se


def test_zero_hits_reported_with_upper_bound(noise_model):
    reg = make_regime(0.05, "R1")
    est = estimate_plain(noise_model, reg, EventSpec("terminal_mode", 50.0, 1),
                         500, 0.2, reg.delta / 10, seed=3)
    assert est.p_hat == 0.0
    assert est.relative_error == np.inf
    assert est.ci_upper == pytest.approx(1 - 0.05 ** (1 / 500))


def test_importance_with_zero_controls_reduces_to_plain(noise_model):
    reg = make_regime(0.05, "R1")
    ev = EventSpec("terminal_mode", 0.6, 1)
    dt = reg.delta / 10
    psi = SmoothPath.linear_mode(noise_model.basis_slow, 1.0, 1e-3, 1, 0.6)
    plain = estimate_plain(noise_model, reg, ev, 1000, 1.0, dt, seed=4)
    is_est = estimate_importance(noise_model, reg, ev, psi, 1000, 1.0, dt, seed=4,
                                 controls=zero_control())
    assert is_est.p_hat == pytest.approx(plain.p_hat, abs=1e-12)
    assert is_est.mean_weight == pytest.approx(1.0, abs=1e-12)


def test_importance_unbiased_across_seeds(noise_model):
    reg = make_regime(0.05, "R1")
    dt = reg.delta / 10
    v = eta_terminal_variance(0.05)
    r = norm.ppf(1 - 5e-4) * np.sqrt(v)  # two-sided p = 1e-3
    p = 1e-3
    ev = EventSpec("terminal_mode", r, 1)
    psi = SmoothPath.linear_mode(noise_model.basis_slow, 1.0, 1e-3, 1, r)
    for seed in (100, 101, 102):
        est = estimate_importance(noise_model, reg, ev, psi, 3000, 1.0, dt, seed=seed)
        assert abs(est.p_hat - p) < 3.5 * est.p_hat * est.relative_error
        # the weighted total mass is one, within its own sampling error
        se_w = np.sqrt(max(est.weight_second_moment - est.mean_weight**2, 0.0) / 3000)
        assert abs(est.mean_weight - 1.0) < 3.5 * se_w


def test_importance_beats_plain_variance(noise_model):
    reg = make_regime(0.05, "R1")
    dt = reg.delta / 10
    v = eta_terminal_variance(0.05)
    r = norm.ppf(1 - 5e-4) * np.sqrt(v)
    ev = EventSpec("terminal_mode", r, 1)
    psi = SmoothPath.linear_mode(noise_model.basis_slow, 1.0, 1e-3, 1, r)
    n = 3000
    plain = estimate_plain(noise_model, reg, ev, n, 1.0, dt, seed=5)
    is_est = estimate_importance(noise_model, reg, ev, psi, n, 1.0, dt, seed=6)
    assert is_est.relative_error <= 0.5 * plain.relative_error
    assert is_est.second_moment <= plain.second_moment


def test_plain_and_importance_consistent(noise_model):
    reg = make_regime(0.05, "R1")
    dt = reg.delta / 10
    r = 0.6  # p ~ 5e-2, both estimators well resolved
    v = eta_terminal_variance(0.05)
    ev = EventSpec("terminal_mode", r, 1)
    psi = SmoothPath.linear_mode(noise_model.basis_slow, 1.0, 1e-3, 1, r)
    for seed in range(5):
        plain = estimate_plain(noise_model, reg, ev, 2000, 1.0, dt, seed=200 + seed)
        is_est = estimate_importance(noise_model, reg, ev, psi, 2000, 1.0, dt, seed=300 + seed)
        se = np.sqrt((plain.p_hat * plain.relative_error) ** 2
                     + (is_est.p_hat * is_est.relative_error) ** 2)
        assert abs(plain.p_hat - is_est.p_hat) < 3.5 * se


def test_sup_norm_dominates_terminal(noise_model):
    reg = make_regime(0.05, "R1")
    dt = reg.delta / 10
    r = 0.6
    term = estimate_plain(noise_model, reg, EventSpec("terminal_norm", r), 500, 0.5, dt, seed=7)
    sup = estimate_plain(noise_model, reg, EventSpec("sup_norm", r), 500, 0.5, dt, seed=7)
    assert sup.p_hat >= term.p_hat


def test_asymptote_linear_regime1(lin_model):
    reg = make_regime(0.04, "R1")
    res = mdp_asymptote(lin_model, reg, EventSpec("terminal_mode", 1.0, 1),
                        SearchConfig(dt=1e-3, tol=1e-9))
    assert res.S == pytest.approx(7.0 / 6.0, abs=1e-5)
    assert res.c_star == pytest.approx(1.0, abs=1e-6)
    res_half = mdp_asymptote(lin_model, reg, EventSpec("terminal_mode", 0.5, 1),
                             SearchConfig(dt=1e-3, tol=1e-9))
    assert res_half.S == pytest.approx(7.0 / 24.0, abs=1e-5)


def test_asymptote_zero_level(lin_model):
    reg = make_regime(0.04, "R1")
    res = mdp_asymptote(lin_model, reg, EventSpec("terminal_mode", 0.0, 1))
    assert res.S == 0.0


def test_asymptote_norm_event_picks_cheapest_mode(lin_model):
    reg = make_regime(0.04, "R1")
    res = mdp_asymptote(lin_model, reg, EventSpec("terminal_norm", 0.5),
                        SearchConfig(dt=1e-3, tol=1e-8))
    assert res.mode == 1  # lowest mode has the smallest ramp cost
    assert res.S == pytest.approx(7.0 / 24.0, abs=1e-5)
    assert res.per_mode[2] > res.per_mode[1]


def test_asymptote_rejects_sup_events(lin_model):
    reg = make_regime(0.04, "R1")
    with pytest.raises(ConfigError):
        mdp_asymptote(lin_model, reg, EventSpec("sup_norm", 0.5))


def test_event_validation():
    with pytest.raises(ConfigError):
        EventSpec("bogus", 1.0)
    with pytest.raises(ConfigError):
        EventSpec("terminal_norm", -1.0)
    with pytest.raises(ConfigError):
        EventSpec("terminal_mode", 1.0, 0)


def test_exponent_tracking_logged(noise_model, capsys):
    # informational: -log p / h^2 moves toward the rate-function asymptote
    reg_a = make_regime(0.1, "R1")
    reg_b = make_regime(0.05, "R1")
    r = 0.8
    ev = EventSpec("terminal_mode", r, 1)
    rows = []
    for reg in (reg_a, reg_b):
        v = eta_terminal_variance(reg.epsilon)
        p = 2 * (1 - norm.cdf(r / np.sqrt(v)))
        rows.append((reg.epsilon, -np.log(p) / reg.h**2))
    print("exponent tracking (closed form):", rows)
    assert rows[1][1] > 0

"""Feynman-Kac evaluation of the damped Kolmogorov solution and the limiting
y-derivative operator on the Galerkin basis.

The operator matrix entry (k, j) is the time integral over [0, t_max] of the
Monte Carlo mean of < dy_f(x, Y(t)) e_k, Z_j(t) >, where Y is the frozen fast
process started at the anchor y and Z_j is its first variation along e_j,
driven by the same noise realization path by path. The tail beyond t_max is
bounded by dy_bound * exp(-ell t_max) / ell and reported, never silently
dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gamma as gamma_fn

from .averaging import DriftEstimate, InvariantSample, averaged_drift
from .dynamics import FrozenFastEngine
from .errors import ConfigError
from .model import Component, ModelSpec, require_hypotheses
from .spectral import Field, check_basis


@dataclass
class Psi2Matrix:
    """Galerkin block of the limiting y-derivative operator at one (x, y)."""

    frozen_x: np.ndarray
    anchor_y: np.ndarray
    entries: np.ndarray  # (m, m), entry (k, j) pairs row mode k with column direction j
    se: np.ndarray
    mc_paths: int
    t_max: float
    dt: float
    tail_bound: float
    norm_bound: float  # dy_bound / ell

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    def spectral_norm(self) -> float:
        return float(np.linalg.norm(self.entries, 2))

    def to_csv(self) -> str:
        lines = ["row,col,value,se"]
        m = self.m
        for k in range(m):
            for j in range(m):
                lines.append(f"{k + 1},{j + 1},{self.entries[k, j]:.17g},{self.se[k, j]:.17g}")
        return "\n".join(lines) + "\n"


def _psi2_path_integrals(
    model: ModelSpec,
    x_coeffs: np.ndarray,
    Y0: np.ndarray,
    m: int,
    n_steps: int,
    dt: float,
    seed: int,
    discount: float = 0.0,
    noise_off: bool = False,
) -> np.ndarray:
    """Per-path time integrals of < dy_f(x, Y(t)) e_k, Z_j(t) >, shape (P, m, m).

    All paths are advanced in one batch; Z mirrors the frozen-fast update so
    it is the exact derivative of the discrete flow.
    """
    P = Y0.shape[0]
    a = model.basis_fast.eigenvalues
    E = np.exp(-a * dt)
    phi1 = (1.0 - E) / a
    engine = FrozenFastEngine(model, x_coeffs, Y0, dt, seed, n_paths=P, noise_off=noise_off)
    x_grid = engine.x_grid
    Bs = model.synth_slow[:, :m]  # (Q, m) row modes
    Bf = model.synth_fast  # (Q, n_fast)
    Z = np.zeros((P, m, model.n_fast))
    for j in range(m):
        Z[:, j, j] = 1.0
    g_active = model.g.dy_bound > 0.0

    def integrand(t_idx):
        Yg = model.synthesize(engine.Y, Component.FAST)
        mult = model.f.dy(x_grid[None, :], Yg)  # (P, Q)
        Zg = Z @ Bf.T  # (P, m, Q)
        # vals[p, k, j] = w * sum_q mult[p, q] Zg[p, j, q] Bs[q, k]
        vals = model.weight * ((mult[:, None, :] * Zg) @ Bs).transpose(0, 2, 1)
        if discount > 0.0:
            vals = vals * np.exp(-discount * t_idx * dt)
        return vals, Yg

    acc = np.zeros((P, m, m))
    vals, Yg = integrand(0)
    acc += 0.5 * dt * vals
    for k in range(n_steps):
        if g_active:
            gm = model.g.dy(x_grid[None, :], Yg)  # (P, Q)
            Zg = Z @ Bf.T
            coupling = (gm[:, None, :] * Zg) @ model.analysis_fast.T
            Z = E * Z + phi1 * coupling
        else:
            Z = E * Z
        engine.step()
        vals, Yg = integrand(k + 1)
        w = dt if k + 1 < n_steps else 0.5 * dt
        acc += w * vals
    return acc


def _psi2_check_args(model, m, mc_paths, t_max):
    report = require_hypotheses(model)
    ell = report.ell
    if m < 1 or m > min(model.n_slow, model.n_fast):
        raise ConfigError(f"matrix dimension m={m} outside [1, {min(model.n_slow, model.n_fast)}]")
    if mc_paths < 1:
        raise ConfigError("mc_paths must be >= 1")
    if t_max is None:
        t_max = 10.0 / ell
    if t_max * ell < 5.0:
        raise ConfigError(
            f"t_max={t_max} too short: t_max * ell = {t_max * ell:.3f} < 5, tail not negligible"
        )
    return ell, t_max


def psi2_zero_matrix(
    model: ModelSpec,
    x: Field,
    y: Field,
    m: int,
    mc_paths: int,
    t_max: Optional[float] = None,
    dt: float = 1e-3,
    seed: int = 0,
    discount: float = 0.0,
    noise_off: bool = False,
) -> Psi2Matrix:
    """Matrix of the limiting y-derivative operator on the first m modes.

    ``discount > 0`` computes the damped (finite-epsilon) version with factor
    exp(-discount * t) under the integral; 0 gives the limit operator.
    """
    check_basis(x, model.basis_slow)
    check_basis(y, model.basis_fast)
    ell, t_max = _psi2_check_args(model, m, mc_paths, t_max)
    dy_bound = model.f.dy_bound
    tail = dy_bound * np.exp(-ell * t_max) / ell
    if dy_bound == 0.0:
        zeros = np.zeros((m, m))
        return Psi2Matrix(x.coeffs.copy(), y.coeffs.copy(), zeros, zeros.copy(), mc_paths, t_max, dt, 0.0, 0.0)

    n_steps = int(round(t_max / dt))
    Y0 = np.broadcast_to(y.coeffs, (mc_paths, model.n_fast)).copy()
    acc = _psi2_path_integrals(model, x.coeffs, Y0, m, n_steps, dt, seed, discount, noise_off)
    entries = acc.mean(axis=0)
    se = acc.std(axis=0, ddof=1) / np.sqrt(mc_paths) if mc_paths > 1 else np.zeros_like(entries)
    return Psi2Matrix(
        frozen_x=x.coeffs.copy(),
        anchor_y=y.coeffs.copy(),
        entries=entries,
        se=se,
        mc_paths=mc_paths,
        t_max=t_max,
        dt=dt,
        tail_bound=float(tail),
        norm_bound=float(dy_bound / ell),
    )


def psi2_matrices_at(
    model: ModelSpec,
    x: Field,
    anchors: np.ndarray,
    m: int,
    mc_paths: int,
    t_max: Optional[float] = None,
    dt: float = 1e-3,
    seed: int = 0,
    noise_off: bool = False,
) -> np.ndarray:
    """Operator matrices at several anchor states y in one batched run.

    Returns (len(anchors), m, m); each anchor's matrix averages mc_paths
    independent paths started at that anchor.
    """
    check_basis(x, model.basis_slow)
    ell, t_max = _psi2_check_args(model, m, mc_paths, t_max)
    S = anchors.shape[0]
    if model.f.dy_bound == 0.0:
        return np.zeros((S, m, m))
    n_steps = int(round(t_max / dt))
    Y0 = np.repeat(anchors, mc_paths, axis=0)
    acc = _psi2_path_integrals(model, x.coeffs, Y0, m, n_steps, dt, seed, 0.0, noise_off)
    return acc.reshape(S, mc_paths, m, m).mean(axis=1)


def phi_eps_value(
    model: ModelSpec,
    regime,
    x: Field,
    y: Field,
    chi: Field,
    mc_paths: int,
    t_max: Optional[float] = None,
    dt: float = 1e-3,
    seed: int = 0,
    inv: Optional[InvariantSample] = None,
    fbar: Optional[Field] = None,
    noise_off: bool = False,
) -> float:
    """Damped Feynman-Kac value: integral of e^{-c t} E < F(x, Y(t)) - Fbar(x), chi >.

    Diagnostic quantity; the damping constant is regime.c_eps. The damping
    integrates the centering term with weight 1/c, so ``fbar`` may be supplied
    directly when a sharper value than the Monte Carlo averaged drift is known.
    """
    check_basis(x, model.basis_slow)
    check_basis(y, model.basis_fast)
    report = require_hypotheses(model)
    ell = report.ell
    if t_max is None:
        t_max = 10.0 / ell
    if t_max * ell < 5.0:
        raise ConfigError(f"t_max * ell = {t_max * ell:.3f} < 5, tail not negligible")
    if fbar is None:
        if inv is None:
            from .averaging import sample_invariant

            inv = sample_invariant(model, x, count=256, dt=dt * 10, seed=seed + 1)
        fbar = averaged_drift(model, x, inv).field
    x_grid = model.synthesize(x.coeffs, Component.SLOW)
    chig = model.synthesize(chi.coeffs, chi.basis.component)
    fbar_grid = model.synthesize(fbar.coeffs, Component.SLOW)
    c = regime.c_eps
    n_steps = int(round(t_max / dt))
    engine = FrozenFastEngine(model, x.coeffs, y.coeffs, dt, seed, n_paths=mc_paths, noise_off=noise_off)

    def point():
        Yg = model.synthesize(engine.Y, Component.FAST)
        fv = model.f.value(x_grid[None, :], Yg) - fbar_grid[None, :]
        return model.weight * (fv * chig[None, :]).sum(axis=1)  # (P,)

    total = 0.5 * dt * point().mean()
    for k in range(n_steps):
        engine.step()
        w = dt if k + 1 < n_steps else 0.5 * dt
        total += w * np.exp(-c * (k + 1) * dt) * point().mean()
    return float(total)


@dataclass
class ContinuityReport:
    ratio_x: float
    ratio_y: float
    reference_scale: float  # Gamma(5/4) / omega^(5/4), informational


def psi2_continuity_modulus(
    model: ModelSpec,
    x1: Field,
    x2: Field,
    y1: Field,
    y2: Field,
    m: int,
    mc_paths: int,
    seed: int = 0,
    t_max: Optional[float] = None,
    dt: float = 1e-3,
) -> ContinuityReport:
    """Empirical Lipschitz ratios of the operator matrix in x and in y.

    Shared seeds cancel most of the Monte Carlo variance between the paired
    evaluations. The x-ratio is comparable (informationally, not asserted) to
    Gamma(5/4) / omega^(5/4).
    """
    report = require_hypotheses(model, need_omega=True)
    dx = float(np.linalg.norm(x1.coeffs - x2.coeffs))
    dy = float(np.linalg.norm(y1.coeffs - y2.coeffs))
    if dx == 0.0 or dy == 0.0:
        raise ConfigError("continuity modulus needs distinct x inputs and distinct y inputs")
    kw = dict(m=m, mc_paths=mc_paths, t_max=t_max, dt=dt, seed=seed)
    mx1 = psi2_zero_matrix(model, x1, y1, **kw)
    mx2 = psi2_zero_matrix(model, x2, y1, **kw)
    my1 = psi2_zero_matrix(model, x1, y1, **kw)
    my2 = psi2_zero_matrix(model, x1, y2, **kw)
    ratio_x = float(np.linalg.norm(mx1.entries - mx2.entries, 2)) / dx
    ratio_y = float(np.linalg.norm(my1.entries - my2.entries, 2)) / dy
    scale = float(gamma_fn(1.25) / report.omega**1.25)
    return ContinuityReport(ratio_x=ratio_x, ratio_y=ratio_y, reference_scale=scale)


@dataclass
class Psi2Config:
    """Evaluation parameters for operator matrices used inside other modules."""

    m: int = 8
    mc_paths: int = 4
    t_max: Optional[float] = None
    dt: float = 1e-3
    seed: int = 303
    noise_off: bool = False


class Psi2Evaluator:
    """Memoized operator-matrix evaluation keyed by quantized (x, y).

    The cache makes repeated feedback-control and quadratic-form evaluations
    affordable; the resolution knob trades accuracy of the y-dependence for
    speed (it does not affect estimator unbiasedness, only control quality).
    """

    def __init__(self, model: ModelSpec, cfg: Psi2Config, resolution: float = 1e-6):
        self.model = model
        self.cfg = cfg
        self.resolution = resolution
        self._store: dict = {}
        self._constant = model.f.dy_bound == 0.0
        # with a state-free multiplier and an uncoupled first variation the
        # operator is literally one matrix for every (x, y)
        self._input_free = model.g.dy_bound == 0.0 and model.f.dy_is_constant
        self._m = cfg.m

    def _key(self, x_coeffs, y_coeffs):
        if self._input_free:
            return "state-free"
        r = self.resolution
        qx = tuple(np.round(np.asarray(x_coeffs) / r).astype(np.int64).tolist())
        qy = tuple(np.round(np.asarray(y_coeffs) / r).astype(np.int64).tolist())
        return qx, qy

    def matrix(self, x_coeffs: np.ndarray, y_coeffs: np.ndarray) -> np.ndarray:
        if self._constant:
            return np.zeros((self._m, self._m))
        key = self._key(x_coeffs, y_coeffs)
        hit = self._store.get(key)
        if hit is None:
            cfg = self.cfg
            res = psi2_zero_matrix(
                self.model,
                Field(np.asarray(x_coeffs, dtype=float), self.model.basis_slow),
                Field(np.asarray(y_coeffs, dtype=float), self.model.basis_fast),
                m=cfg.m,
                mc_paths=cfg.mc_paths,
                t_max=cfg.t_max,
                dt=cfg.dt,
                seed=cfg.seed,
                noise_off=cfg.noise_off,
            )
            hit = res.entries
            self._store[key] = hit
        return hit

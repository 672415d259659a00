"""Invariant-measure sampling for the frozen fast process, averaged drift and
Jacobian, and the deterministic averaged dynamics.

The invariant measure is sampled by time-stepping the frozen process (many
independent chains, burn-in, thinning), never by analytic Gaussian sampling,
so nonlinear fast reactions are supported uniformly. Sampled measures are
cached under a quantized copy of the frozen slow state; when the fast
reaction does not depend on the slow variable the measure is shared across
all states.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dynamics import FrozenFastEngine, PathBundle, _time_grid
from .errors import ConfigError, MdspdeError
from .model import (
    Component,
    ModelSpec,
    ReactionFamily,
    require_hypotheses,
)
from .spectral import Field, check_basis


@dataclass
class InvariantPolicy:
    """Sampling and reuse policy for frozen-process invariant measures."""

    count: int = 256
    burn_in: Optional[float] = None  # None -> 10 / ell
    thinning: Optional[float] = None  # None -> 1 / ell
    dt: float = 0.02
    seed: int = 101
    chains: int = 64
    refresh_every: float = 0.1
    cache_resolution: float = 1e-3
    cache_enabled: bool = True


@dataclass
class InvariantSample:
    """Thinned ergodic samples of the frozen fast process at one slow state."""

    frozen_x: np.ndarray
    samples: np.ndarray  # (count, n_fast)
    burn_in: float
    thinning: float
    dt: float
    seed: int

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    def to_csv(self) -> str:
        lines = ["sample_index,mode,value"]
        for i, row in enumerate(self.samples):
            for k, v in enumerate(row):
                lines.append(f"{i},{k + 1},{v:.17g}")
        return "\n".join(lines) + "\n"


def sample_invariant(
    model: ModelSpec,
    x: Field,
    count: int,
    burn_in: Optional[float] = None,
    thinning: Optional[float] = None,
    dt: float = 0.02,
    seed: int = 101,
    chains: Optional[int] = None,
) -> InvariantSample:
    """Ergodic samples of the fast process frozen at x.

    Chains start at zero, burn for ``burn_in`` time units (default 10/ell) and
    then emit one state every ``thinning`` units (default 1/ell). Samples are
    drawn across ``chains`` independent chains and collected in (pass, chain)
    order, so the result depends only on (seed, chains).
    """
    check_basis(x, model.basis_slow)
    if count < 1:
        raise ConfigError("invariant sample count must be >= 1")
    report = require_hypotheses(model)
    ell = report.ell
    if burn_in is None:
        burn_in = 10.0 / ell
    if thinning is None:
        thinning = 1.0 / ell
    if chains is None:
        chains = min(count, 64)
    chains = max(1, min(chains, count))
    burn_steps = max(1, int(round(burn_in / dt)))
    thin_steps = max(1, int(round(thinning / dt)))
    per_chain = -(-count // chains)  # ceil

    engine = FrozenFastEngine(model, x.coeffs, np.zeros(model.n_fast), dt, seed, n_paths=chains)
    for _ in range(burn_steps):
        engine.step()
    blocks = []
    for _ in range(per_chain):
        for _ in range(thin_steps):
            engine.step()
        blocks.append(engine.Y.copy())
    samples = np.concatenate(blocks, axis=0)[:count]
    return InvariantSample(
        frozen_x=x.coeffs.copy(),
        samples=samples,
        burn_in=burn_steps * dt,
        thinning=thin_steps * dt,
        dt=dt,
        seed=seed,
    )


class InvariantCache:
    """Reuses invariant samples keyed by a quantized frozen slow state.

    When the fast reaction g does not read the slow variable the invariant
    measure is the same for every x and a single entry is shared.
    """

    def __init__(self, model: ModelSpec, policy: InvariantPolicy):
        self.model = model
        self.policy = policy
        self._store: dict = {}
        self._x_free = model.g.family != ReactionFamily.TANH_SUM

    def _key(self, x_coeffs: np.ndarray):
        if self._x_free:
            return "x-free"
        res = self.policy.cache_resolution
        return tuple(np.round(np.asarray(x_coeffs) / res).astype(np.int64).tolist())

    def get(self, x: Field) -> InvariantSample:
        p = self.policy
        if not p.cache_enabled:
            return sample_invariant(
                self.model, x, p.count, p.burn_in, p.thinning, p.dt, p.seed, p.chains
            )
        key = self._key(x.coeffs)
        hit = self._store.get(key)
        if hit is None:
            hit = sample_invariant(
                self.model, x, p.count, p.burn_in, p.thinning, p.dt, p.seed, p.chains
            )
            self._store[key] = hit
        return hit


@dataclass
class DriftEstimate:
    """Monte Carlo estimate of an averaged field with entrywise standard errors."""

    field: Field
    se: np.ndarray

    @property
    def se_norm(self) -> float:
        return float(np.linalg.norm(self.se))


def _check_frozen(model: ModelSpec, inv: InvariantSample, x: Field):
    # a fast reaction that never reads the slow state has one invariant
    # measure for every x, so shared samples are valid at any state
    if model.g.family != ReactionFamily.TANH_SUM:
        return
    if inv.frozen_x.shape != x.coeffs.shape or not np.allclose(inv.frozen_x, x.coeffs, atol=1e-12):
        raise MdspdeError("invariant sample was drawn at a different frozen slow state")


def averaged_drift(model: ModelSpec, x: Field, inv: InvariantSample) -> DriftEstimate:
    """Mean of F(x, y) over the sampled invariant measure."""
    check_basis(x, model.basis_slow)
    _check_frozen(model, inv, x)
    if inv.count < 1:
        raise ConfigError("empty invariant sample")
    xg = model.synthesize(x.coeffs, Component.SLOW)
    yg = model.synthesize(inv.samples, Component.FAST)
    values = model.f.value(xg[None, :], yg)
    coeffs = model.analyze(values, Component.SLOW)
    mean = coeffs.mean(axis=0)
    se = coeffs.std(axis=0, ddof=1) / np.sqrt(inv.count) if inv.count > 1 else np.zeros_like(mean)
    return DriftEstimate(Field(mean, model.basis_slow), se)


def averaged_jacobian(model: ModelSpec, x: Field, inv: InvariantSample, chi: Field) -> DriftEstimate:
    """Mean of DxF(x, y) chi over the sampled invariant measure."""
    check_basis(x, model.basis_slow)
    _check_frozen(model, inv, x)
    if inv.count < 1:
        raise ConfigError("empty invariant sample")
    xg = model.synthesize(x.coeffs, Component.SLOW)
    yg = model.synthesize(inv.samples, Component.FAST)
    chig = model.synthesize(chi.coeffs, chi.basis.component)
    values = model.f.dx(xg[None, :], yg) * chig[None, :]
    coeffs = model.analyze(values, Component.SLOW)
    mean = coeffs.mean(axis=0)
    se = coeffs.std(axis=0, ddof=1) / np.sqrt(inv.count) if inv.count > 1 else np.zeros_like(mean)
    return DriftEstimate(Field(mean, model.basis_slow), se)


def averaged_dx_grid(model: ModelSpec, x_grid: np.ndarray, inv: InvariantSample) -> np.ndarray:
    """Grid multiplier mean_s d_x f(xi, x(xi), y_s(xi)); zero shortcut when d_x f == 0."""
    if model.f.dx_bound == 0.0:
        return np.zeros(model.quad_points)
    yg = model.synthesize(inv.samples, Component.FAST)
    return model.f.dx(x_grid[None, :], yg).mean(axis=0)


def solve_averaged(
    model: ModelSpec,
    x0: Field,
    T: float,
    dt: float,
    inv_policy: Optional[InvariantPolicy] = None,
    cache: Optional[InvariantCache] = None,
) -> PathBundle:
    """Deterministic averaged slow dynamics by exponential Euler.

    The invariant measure entering the averaged drift is refreshed every
    ``inv_policy.refresh_every`` time units at the current state and reused in
    between (the drift itself is re-evaluated at every step).
    """
    check_basis(x0, model.basis_slow)
    policy = inv_policy or InvariantPolicy()
    cache = cache or InvariantCache(model, policy)
    require_hypotheses(model)
    n_steps, t = _time_grid(T, dt)
    E1 = np.exp(-model.basis_slow.eigenvalues * dt)
    X = np.empty((n_steps + 1, model.n_slow))
    X[0] = x0.coeffs
    f_zero = model.f.family == ReactionFamily.ZERO
    refresh_steps = max(1, int(round(policy.refresh_every / dt)))
    inv = None
    yg = None
    for k in range(n_steps):
        xk = X[k]
        if f_zero:
            X[k + 1] = E1 * xk
            continue
        if inv is None or k % refresh_steps == 0:
            inv = cache.get(Field(xk, model.basis_slow))
            yg = model.synthesize(inv.samples, Component.FAST)
        xg = model.synthesize(xk, Component.SLOW)
        fbar = model.analyze(model.f.value(xg[None, :], yg).mean(axis=0), Component.SLOW)
        X[k + 1] = E1 * (xk + dt * fbar)
    return PathBundle(
        t=t,
        X=X,
        seed=policy.seed,
        noise_off=True,
        meta={"kind": "averaged", "dt": dt, "refresh_every": policy.refresh_every},
    )

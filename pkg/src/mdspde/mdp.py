"""Quadratic-form operator, non-variational rate functional, optimal feedback
controls and the limiting controlled equation.

The rate of a smooth path psi with psi(0) = 0 is

    S = 1/2 * integral of || Q(Xbar(t))^{-1/2} r(t) ||^2 dt,
    r(t) = dpsi/dt - A1 psi - averaged-Jacobian(Xbar(t)) psi,

where Q(x) averages Sigma Sigma^* + gamma^2 Psi Psi^* over the invariant
measure at x. The minimizing feedback controls are Sigma^* Q^{-1} r and
gamma Psi^* Q^{-1} r, and their quadratic cost reproduces S exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .averaging import InvariantCache, InvariantPolicy, InvariantSample
from .dynamics import ControlSpec, PathBundle, RegimeParams, _time_grid
from .errors import ConfigError, GridMismatchError, HypothesisError
from .kolmogorov import Psi2Config, Psi2Evaluator, psi2_matrices_at
from .model import Component, ModelSpec, ReactionFamily, require_hypotheses, validate_hypotheses
from .spectral import Field, SpectralBasis, check_basis

_T_CHUNK = 512  # time-block width for batched grid evaluations


@dataclass
class QMatrix:
    """Invariant-measure average of Sigma Sigma^* + gamma^2 Psi Psi^* on m modes."""

    regime: str
    x: np.ndarray
    entries: np.ndarray  # (m, m), symmetric
    se: np.ndarray
    min_eigenvalue: float
    mu_count: int

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    def inverse_norm(self) -> float:
        return float(np.linalg.norm(np.linalg.inv(self.entries), 2))


@dataclass
class QPolicy:
    """How Q(Xbar(t)) is assembled and refreshed along the averaged path."""

    m: int = 0  # 0 -> all retained modes
    refresh_every: float = 0.1
    inv: InvariantPolicy = field(default_factory=InvariantPolicy)
    psi2: Psi2Config = field(default_factory=Psi2Config)
    mu_samples: int = 16  # invariant samples entering the Psi2 block
    seed: int = 202


def q_matrix(
    model: ModelSpec,
    regime: RegimeParams,
    x: Field,
    inv: InvariantSample,
    m: int,
    psi2_cfg: Optional[Psi2Config] = None,
    seed: int = 202,
    mu_samples: int = 16,
) -> QMatrix:
    """Assemble the m x m quadratic-form matrix at the frozen slow state x.

    The diffusion block is exact per invariant sample (Gram matrix of the
    multiplication operator on the collocation grid); the derivative-operator
    block is evaluated per sample with independent noise. Every per-sample
    matrix is positive semidefinite and bounded below by c1^2 I, so the mean
    inherits the bound exactly.
    """
    check_basis(x, model.basis_slow)
    report = validate_hypotheses(model)
    if not report.overall_pass:
        raise HypothesisError("model fails structural conditions required for Q", report)
    if m < 1 or m > model.n_slow:
        raise ConfigError(f"block dimension m={m} outside [1, {model.n_slow}]")
    x_grid = model.synthesize(x.coeffs, Component.SLOW)
    B = model.synth_slow[:, :m]
    use_psi = regime.gamma > 0.0 and model.f.dy_bound > 0.0
    samples = inv.samples
    if use_psi:
        samples = samples[: max(1, min(mu_samples, samples.shape[0]))]
    yg = model.synthesize(samples, Component.FAST)
    s2 = model.sigma.value(x_grid[None, :], yg) ** 2  # (count, Q)
    grams = model.weight * np.einsum("sq,qk,qj->skj", s2, B, B)
    if use_psi:
        cfg = psi2_cfg or Psi2Config()
        mats = psi2_matrices_at(
            model,
            x,
            samples,
            m=m,
            mc_paths=cfg.mc_paths,
            t_max=cfg.t_max,
            dt=cfg.dt,
            seed=seed,
            noise_off=cfg.noise_off,
        )
        grams = grams + regime.gamma**2 * np.einsum("skj,slj->skl", mats, mats)
    entries = grams.mean(axis=0)
    entries = 0.5 * (entries + entries.T)
    count = grams.shape[0]
    se = grams.std(axis=0, ddof=1) / np.sqrt(count) if count > 1 else np.zeros_like(entries)
    min_eig = float(np.linalg.eigvalsh(entries)[0])
    return QMatrix(
        regime=regime.regime,
        x=x.coeffs.copy(),
        entries=entries,
        se=se,
        min_eigenvalue=min_eig,
        mu_count=count,
    )


@dataclass
class SmoothPath:
    """Slow-basis coefficient path on a uniform grid, starting at zero."""

    t: np.ndarray
    values: np.ndarray  # (len(t), n_slow)
    basis: SpectralBasis

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.t), self.basis.n):
            raise ConfigError("path values must have shape (len(t), modes)")
        if np.linalg.norm(self.values[0]) > 1e-12:
            raise ConfigError("rate-function paths must start at zero")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @classmethod
    def linear_mode(cls, basis: SpectralBasis, T: float, dt: float, mode: int, slope: float) -> "SmoothPath":
        """psi(t) = slope * t * e_mode."""
        if not 1 <= mode <= basis.n:
            raise ConfigError(f"mode {mode} outside [1, {basis.n}]")
        _, t = _time_grid(T, dt)
        values = np.zeros((len(t), basis.n))
        values[:, mode - 1] = slope * t
        return cls(t=t, values=values, basis=basis)

    def time_derivative(self) -> np.ndarray:
        """Central differences inside, one-sided at the ends."""
        v, t = self.values, self.t
        d = np.empty_like(v)
        dt = self.dt
        d[1:-1] = (v[2:] - v[:-2]) / (2.0 * dt)
        d[0] = (v[1] - v[0]) / dt
        d[-1] = (v[-1] - v[-2]) / dt
        return d


def _interp_rows(t_src: np.ndarray, rows: np.ndarray, t_query: np.ndarray) -> np.ndarray:
    """Linear interpolation of a (S, n) array of rows onto query times."""
    t_query = np.atleast_1d(t_query)
    idx = np.clip(np.searchsorted(t_src, t_query, side="right") - 1, 0, len(t_src) - 2)
    frac = (t_query - t_src[idx]) / (t_src[idx + 1] - t_src[idx])
    frac = np.clip(frac, 0.0, 1.0)[:, None]
    return (1.0 - frac) * rows[idx] + frac * rows[idx + 1]


class RateEvaluator:
    """Precomputed quadratic-form data along one averaged path and one grid.

    Holds the interpolated averaged path, the invariant-sample anchors, the
    averaged-Jacobian multiplier on the grid and the eigenfactorized Q at each
    refresh anchor, so that repeated path evaluations (e.g. inside a search)
    cost two matrix products.
    """

    def __init__(
        self,
        model: ModelSpec,
        regime: RegimeParams,
        xbar: PathBundle,
        grid_t: np.ndarray,
        q_policy: Optional[QPolicy] = None,
    ):
        if xbar.X is None:
            raise GridMismatchError("averaged bundle must carry a slow trajectory")
        self.model = model
        self.regime = regime
        self.policy = q_policy or QPolicy()
        self.t = np.asarray(grid_t, dtype=float)
        self.m = self.policy.m or model.n_slow
        require_hypotheses(model)
        if not validate_hypotheses(model).sigma_bounds_ok:
            raise HypothesisError("rate evaluation needs pinched diffusion bounds")
        self.Xbar = _interp_rows(xbar.t, xbar.X, self.t)
        S = len(self.t)
        cache = InvariantCache(model, self.policy.inv)
        step = self.t[1] - self.t[0] if S > 1 else 1.0
        stride = max(1, int(round(self.policy.refresh_every / step)))
        anchors = list(range(0, S, stride))
        self.anchor_of = np.minimum(np.searchsorted(anchors, np.arange(S), side="right") - 1, len(anchors) - 1)
        self._anchor_idx = anchors
        self._q_factors = []
        self._anchor_invs = []
        dx_active = model.f.dx_bound > 0.0
        self.mult = np.zeros((S, model.quad_points)) if dx_active else None
        # Q(x) reads x only through sigma and the fast coupling; for constant
        # sigma and a fast reaction that never reads the slow state it is one
        # matrix for every anchor (the catalog's dy_f never reads x).
        q_x_free = model.sigma.is_constant and model.g.family != ReactionFamily.TANH_SUM
        shared = None
        for a_pos, idx in enumerate(anchors):
            xa = Field(self.Xbar[idx], model.basis_slow)
            inv = cache.get(xa)
            self._anchor_invs.append(inv)
            if q_x_free and shared is not None:
                self._q_factors.append(shared)
                continue
            qm = q_matrix(
                model,
                regime,
                xa,
                inv,
                m=self.m,
                psi2_cfg=self.policy.psi2,
                seed=self.policy.seed,
                mu_samples=self.policy.mu_samples,
            )
            w, V = np.linalg.eigh(qm.entries)
            if w[0] <= 0:
                raise HypothesisError("quadratic form lost positivity (should be impossible)")
            shared = (w, V, qm)
            self._q_factors.append(shared)
            if dx_active:
                lo = idx
                hi = anchors[a_pos + 1] if a_pos + 1 < len(anchors) else S
                yg = model.synthesize(inv.samples, Component.FAST)
                for c0 in range(lo, hi, _T_CHUNK):
                    c1 = min(c0 + _T_CHUNK, hi)
                    xg = model.synthesize(self.Xbar[c0:c1], Component.SLOW)  # (c, Q)
                    self.mult[c0:c1] = model.f.dx(xg[:, None, :], yg[None, :, :]).mean(axis=1)

    def anchor_inv(self, i: int) -> InvariantSample:
        return self._anchor_invs[self.anchor_of[i]]

    def q_at(self, i: int) -> QMatrix:
        return self._q_factors[self.anchor_of[i]][2]

    def residual(self, psi: SmoothPath) -> np.ndarray:
        """r(t) = dpsi - A1 psi - averaged-Jacobian psi, shape (S, n)."""
        if len(psi.t) != len(self.t) or not np.allclose(psi.t, self.t, atol=1e-12):
            raise GridMismatchError("path grid does not match evaluator grid")
        a1 = self.model.basis_slow.eigenvalues
        r = psi.time_derivative() + a1[None, :] * psi.values
        if self.mult is not None:
            psig = self.model.synthesize(psi.values, Component.SLOW)
            r = r - self.model.analyze(self.mult * psig, Component.SLOW)
        return r

    def weighted_square(self, r: np.ndarray) -> np.ndarray:
        """r(t)^T Q^{-1}(Xbar(t)) r(t) per grid point."""
        S = r.shape[0]
        out = np.empty(S)
        rm = r[:, : self.m]
        extra = r[:, self.m:]
        for a_pos, (w, V, _) in enumerate(self._q_factors):
            sel = self.anchor_of == a_pos
            proj = rm[sel] @ V
            out[sel] = ((proj**2) / w[None, :]).sum(axis=1)
        if extra.size:
            # modes beyond the Q block are weighted by the diffusion floor
            out += (extra**2).sum(axis=1) / self.model.sigma.lower**2
        return out

    def q_inverse_apply(self, r: np.ndarray) -> np.ndarray:
        """Q^{-1}(Xbar(t)) r(t) per grid point, shape (S, m)."""
        S = r.shape[0]
        out = np.empty((S, self.m))
        rm = r[:, : self.m]
        for a_pos, (w, V, _) in enumerate(self._q_factors):
            sel = self.anchor_of == a_pos
            out[sel] = (rm[sel] @ V / w[None, :]) @ V.T
        return out

    def rate(self, psi: SmoothPath) -> "RateReport":
        r = self.residual(psi)
        q = self.weighted_square(r)
        S_val = 0.5 * float(np.trapezoid(q, self.t))
        return RateReport(
            S=S_val,
            regime=self.regime.regime,
            t=self.t.copy(),
            kappa=np.linalg.norm(r, axis=1),
            weighted_residual=np.sqrt(q),
        )


@dataclass
class RateReport:
    """Value of the rate functional with per-time diagnostics."""

    S: float
    regime: str
    t: np.ndarray
    kappa: np.ndarray  # ||r(t)||
    weighted_residual: np.ndarray  # ||Q^{-1/2} r(t)||

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "S": self.S,
            "per_t": [
                (float(t), float(res), float(k))
                for t, res, k in zip(self.t, self.weighted_residual, self.kappa)
            ],
        }


def rate_functional(
    model: ModelSpec,
    regime: RegimeParams,
    psi: SmoothPath,
    xbar: PathBundle,
    q_policy: Optional[QPolicy] = None,
    evaluator: Optional[RateEvaluator] = None,
) -> RateReport:
    """Non-variational rate of a zero-based path along the averaged dynamics."""
    ev = evaluator or RateEvaluator(model, regime, xbar, psi.t, q_policy)
    return ev.rate(psi)


def optimal_controls(
    model: ModelSpec,
    regime: RegimeParams,
    psi: SmoothPath,
    xbar: PathBundle,
    q_policy: Optional[QPolicy] = None,
    energy_cap: float = float("inf"),
    feedback_resolution: float = 0.25,
    evaluator: Optional[RateEvaluator] = None,
) -> ControlSpec:
    """Minimizing feedback controls for the given target path.

    v1(t, y) applies the adjoint diffusion multiplier to Q^{-1} r(t);
    v2(t, y) applies gamma times the adjoint derivative operator. The
    y-dependence of the derivative operator is resolved through a memoized
    evaluator at ``feedback_resolution`` (coarse lookups only affect control
    quality, never estimator unbiasedness).
    """
    ev = evaluator or RateEvaluator(model, regime, xbar, psi.t, q_policy)
    r = ev.residual(psi)
    s_block = ev.q_inverse_apply(r)  # (S, m)
    s_full = np.zeros((len(ev.t), model.n_slow))
    s_full[:, : ev.m] = s_block
    if r.shape[1] > ev.m:
        s_full[:, ev.m:] = r[:, ev.m:] / model.sigma.lower**2
    t_grid = ev.t
    Xbar = ev.Xbar
    sigma = model.sigma
    gamma = regime.gamma
    policy = ev.policy
    m = ev.m

    def v1(t, Y):
        s_t = _interp_rows(t_grid, s_full, np.array([t]))[0]
        P = Y.shape[0]
        if sigma.is_constant:
            return np.broadcast_to(sigma.c * s_t, (P, model.n_slow)).copy()
        xb = _interp_rows(t_grid, Xbar, np.array([t]))[0]
        xg = model.synthesize(xb, Component.SLOW)
        yg = model.synthesize(Y, Component.FAST)
        sg = sigma.value(xg[None, :], yg)
        s_g = model.synthesize(s_t, Component.SLOW)
        return model.analyze(sg * s_g[None, :], Component.SLOW)

    if gamma == 0.0 or model.f.dy_bound == 0.0:
        v2 = None
    else:
        from dataclasses import replace as _dc_replace
        psi2_eval = Psi2Evaluator(model, _dc_replace(policy.psi2, m=m), resolution=feedback_resolution)

        def v2(t, Y):
            s_t = _interp_rows(t_grid, s_full, np.array([t]))[0]
            i = int(np.clip(np.searchsorted(t_grid, t, side="right") - 1, 0, len(t_grid) - 1))
            xb = Xbar[ev._anchor_idx[ev.anchor_of[i]]]
            P = Y.shape[0]
            out = np.zeros((P, model.n_fast))
            for p in range(P):
                M = psi2_eval.matrix(xb, Y[p])
                mm = M.shape[0]
                out[p, :mm] = gamma * (M.T @ s_t[:mm])
            return out

    spec = ControlSpec(kind="feedback", u1=v1, u2=v2, energy_cap=energy_cap)
    spec.meta = {"s": s_full, "t": t_grid, "evaluator": ev}
    return spec


@dataclass
class CostReport:
    cost: float
    se: float

    def __float__(self):
        return self.cost


def control_cost(
    model: ModelSpec,
    regime: RegimeParams,
    controls: ControlSpec,
    xbar: PathBundle,
    inv_policy: Optional[InvariantPolicy] = None,
    grid_t: Optional[np.ndarray] = None,
    max_points: int = 2001,
) -> CostReport:
    """Quadratic control cost 1/2 integral of E_mu[ ||v1||^2 + ||v2||^2 ] dt.

    Monte Carlo over the invariant measure along the averaged path, trapezoid
    in time. Feedback controls are evaluated at the sampled fast states; grids
    longer than ``max_points`` are subsampled for the time quadrature.
    """
    if xbar.X is None:
        raise GridMismatchError("averaged bundle must carry a slow trajectory")
    t = np.asarray(grid_t if grid_t is not None else xbar.t, dtype=float)
    if len(t) > max_points:
        stride = -(-len(t) // max_points)
        idx = np.arange(0, len(t), stride)
        if idx[-1] != len(t) - 1:
            idx = np.append(idx, len(t) - 1)
        t = t[idx]
    policy = inv_policy or InvariantPolicy()
    cache = InvariantCache(model, policy)
    Xbar = _interp_rows(xbar.t, xbar.X, t)
    S = len(t)
    step = t[1] - t[0] if S > 1 else 1.0
    stride = max(1, int(round(policy.refresh_every / step)))
    integrand = np.zeros(S)
    ses = np.zeros(S)
    samples = None
    for i in range(S):
        if controls.kind == "zero":
            break
        if i % stride == 0 or samples is None:
            samples = cache.get(Field(Xbar[i], model.basis_slow)).samples
        u1, u2 = controls.evaluate(t[i], samples, model.n_slow, model.n_fast)
        sq = (u1**2).sum(axis=1) + (u2**2).sum(axis=1)
        integrand[i] = sq.mean()
        if sq.shape[0] > 1:
            ses[i] = sq.std(ddof=1) / np.sqrt(sq.shape[0])
    cost = 0.5 * float(np.trapezoid(integrand, t))
    se = 0.5 * float(np.trapezoid(ses, t))
    return CostReport(cost=cost, se=se)


@dataclass
class LimitSolveResult:
    path: SmoothPath
    mild_residual: float
    residual_t: np.ndarray
    residual_values: np.ndarray


def solve_limit_equation(
    model: ModelSpec,
    regime: RegimeParams,
    controls: ControlSpec,
    xbar: PathBundle,
    T: float,
    dt: float,
    inv_policy: Optional[InvariantPolicy] = None,
    psi2_cfg: Optional[Psi2Config] = None,
    checkpoints: int = 17,
) -> LimitSolveResult:
    """Integrate the limiting affine equation driven by the given controls.

    Exponential Euler on d psi = A1 psi + Jbar(Xbar) psi + b(t), where b
    averages Sigma u1 + gamma Psi u2 over the invariant measure. Also returns
    the worst mild-form defect over a set of checkpoint times.
    """
    policy = inv_policy or InvariantPolicy()
    cache = InvariantCache(model, policy)
    n_steps, t = _time_grid(T, dt)
    Xbar = _interp_rows(xbar.t, xbar.X, t) if xbar.X is not None else np.zeros((len(t), model.n_slow))
    a1 = model.basis_slow.eigenvalues
    E1 = np.exp(-a1 * dt)
    psi = np.zeros((n_steps + 1, model.n_slow))
    xi = np.zeros((n_steps + 1, model.n_slow))  # drift minus linear part, for the mild check
    stride = max(1, int(round(policy.refresh_every / dt)))
    gamma = regime.gamma
    use_psi2 = gamma > 0.0 and model.f.dy_bound > 0.0 and controls.kind != "zero" and controls.u2 is not None
    psi2_eval = Psi2Evaluator(model, psi2_cfg or Psi2Config(), resolution=1e-6) if use_psi2 else None
    dx_active = model.f.dx_bound > 0.0
    samples = yg = None
    psi2_mats = None
    for k in range(n_steps + 1):
        if k % stride == 0 or samples is None:
            samples = cache.get(Field(Xbar[k], model.basis_slow)).samples
            yg = model.synthesize(samples, Component.FAST)
            if use_psi2:
                psi2_mats = [psi2_eval.matrix(Xbar[k], s) for s in samples]
        drift = np.zeros(model.n_slow)
        if dx_active:
            xg = model.synthesize(Xbar[k], Component.SLOW)
            mult = model.f.dx(xg[None, :], yg).mean(axis=0)
            psig = model.synthesize(psi[k], Component.SLOW)
            drift = drift + model.analyze(mult * psig, Component.SLOW)
        if controls.kind != "zero":
            u1, u2 = controls.evaluate(t[k], samples, model.n_slow, model.n_fast)
            if model.sigma.is_constant:
                drift = drift + model.sigma.c * u1.mean(axis=0)
            else:
                xg = model.synthesize(Xbar[k], Component.SLOW)
                sg = model.sigma.value(xg[None, :], yg)
                u1g = model.synthesize(u1, Component.SLOW)
                drift = drift + model.analyze((sg * u1g).mean(axis=0), Component.SLOW)
            if use_psi2:
                acc = np.zeros(model.n_slow)
                mm = psi2_mats[0].shape[0]
                for M, u in zip(psi2_mats, u2):
                    acc[:mm] += M @ u[:mm]
                drift = drift + gamma * acc / len(psi2_mats)
        xi[k] = drift
        if k < n_steps:
            psi[k + 1] = E1 * (psi[k] + dt * drift)

    # mild-form defect: psi(tc) minus the semigroup convolution of xi up to tc
    cp = np.unique(np.linspace(0, n_steps, min(checkpoints, n_steps + 1)).astype(int))
    res_vals = np.zeros(len(cp))
    for j, c in enumerate(cp):
        if c == 0:
            continue
        tw = np.full(c + 1, dt)
        tw[0] = tw[-1] = 0.5 * dt
        fac = np.exp(-np.outer(t[c] - t[: c + 1], a1))  # (c+1, n)
        mild = (tw[:, None] * fac * xi[: c + 1]).sum(axis=0)
        res_vals[j] = np.linalg.norm(psi[c] - mild)
    path = SmoothPath(t=t, values=psi, basis=model.basis_slow)
    return LimitSolveResult(
        path=path,
        mild_residual=float(res_vals.max()) if len(res_vals) else 0.0,
        residual_t=t[cp],
        residual_values=res_vals,
    )

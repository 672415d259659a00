"""Time integration of the slow-fast system, the frozen fast process and the
first variation equation.

The scheme is exponential Euler per retained mode: the linear part enters
through the exact factor exp(-a dt) (slow) and exp(-a dt/delta) (fast), the
nonlinear drift explicitly, and the noise as independent Gaussian mode
increments of variance dt. Controls enter the same slots as the noise
increments they perturb (the slow control is multiplied by the diffusion
operator), so the discrete Girsanov weight over the drawn increments is exact
for the truncated chain.

The frozen fast process runs in its own natural time and uses the exact
Ornstein-Uhlenbeck factorization of the linear part (drift integrated through
(1 - exp(-a dt))/a, noise with the exact stochastic-convolution variance), so
with g = 0 it is the exact discrete OU chain at any step size.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng
from .errors import ConfigError, GridMismatchError, StepSizeError
from .model import Component, ModelSpec, WhichReaction
from .spectral import Field, check_basis

CHUNK_SIZE = 4096  # fixed path-chunk width; noise blocks are keyed per chunk


@dataclass(frozen=True)
class RegimeParams:
    """Small parameters tied together by the asymptotic regime.

    Regime R1: delta = epsilon^(3/2), gamma = 0.
    Regime R2: delta = gamma^2 * epsilon, gamma in (0, inf).
    Speed h = epsilon^(-1/4), occupation window Delta = epsilon^(1/4),
    Kolmogorov damping c_eps = sqrt(epsilon).
    """

    epsilon: float
    regime: str
    gamma: float
    delta: float
    h: float
    Delta_occ: float
    c_eps: float

    @property
    def eta_scale(self) -> float:
        """sqrt(epsilon) * h, the deviation normalization."""
        return np.sqrt(self.epsilon) * self.h


def make_regime(
    epsilon: float,
    regime: str = "R1",
    gamma: float = 1.0,
    delta_exponent: float = 1.5,
    h_exponent: float = 0.25,
    occ_exponent: float = 0.25,
    delta: Optional[float] = None,
    h: Optional[float] = None,
    Delta_occ: Optional[float] = None,
) -> RegimeParams:
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    regime = regime.upper()
    if regime not in ("R1", "R2"):
        raise ConfigError(f"regime must be R1 or R2, got {regime}")
    if regime == "R1":
        gamma_i = 0.0
        delta_val = epsilon**delta_exponent if delta is None else delta
    else:
        if gamma <= 0:
            raise ConfigError("Regime R2 needs gamma > 0")
        gamma_i = gamma
        delta_val = gamma**2 * epsilon if delta is None else delta
    h_val = epsilon ** (-h_exponent) if h is None else h
    occ_val = epsilon**occ_exponent if Delta_occ is None else Delta_occ
    return RegimeParams(
        epsilon=epsilon,
        regime=regime,
        gamma=gamma_i,
        delta=delta_val,
        h=h_val,
        Delta_occ=occ_val,
        c_eps=np.sqrt(epsilon),
    )


@dataclass
class ControlSpec:
    """Control pair (u1, u2) with an almost-sure energy cap.

    kind "zero": both components vanish.
    kind "open_loop": u1(t), u2(t) return slow/fast coefficient vectors.
    kind "feedback": v1(t, Y), v2(t, Y) take the batch of fast states
    (P, n_fast) and return (P, n) coefficient arrays.

    The running left-endpoint energy sum is monitored; once it would exceed
    the cap the control is zeroed for the rest of the path and the breach is
    recorded on the bundle / estimate that used it.
    """

    kind: str = "zero"
    u1: Optional[Callable] = None
    u2: Optional[Callable] = None
    energy_cap: float = float("inf")
    meta: dict = field(default_factory=dict)

    def evaluate(self, t: float, Y: np.ndarray, n_slow: int, n_fast: int):
        P = Y.shape[0]
        if self.kind == "zero":
            return np.zeros((P, n_slow)), np.zeros((P, n_fast))
        if self.kind == "open_loop":
            u1 = np.zeros(n_slow) if self.u1 is None else np.asarray(self.u1(t), dtype=float)
            u2 = np.zeros(n_fast) if self.u2 is None else np.asarray(self.u2(t), dtype=float)
            return np.broadcast_to(u1, (P, n_slow)).copy(), np.broadcast_to(u2, (P, n_fast)).copy()
        if self.kind == "feedback":
            u1 = np.zeros((P, n_slow)) if self.u1 is None else np.asarray(self.u1(t, Y), dtype=float)
            u2 = np.zeros((P, n_fast)) if self.u2 is None else np.asarray(self.u2(t, Y), dtype=float)
            u1 = np.broadcast_to(u1, (P, n_slow)).copy()
            u2 = np.broadcast_to(u2, (P, n_fast)).copy()
            return u1, u2
        raise ConfigError(f"unknown control kind {self.kind!r}")


def zero_control() -> ControlSpec:
    return ControlSpec(kind="zero")


@dataclass
class PathBundle:
    """Trajectories on one shared uniform time grid, fully seeded.

    Component arrays have shape (len(t), modes). The bundle records its seed
    and configuration hash inputs so that identical (config, seed) reproduce
    it bit for bit.
    """

    t: np.ndarray
    X: Optional[np.ndarray] = None
    Y: Optional[np.ndarray] = None
    eta: Optional[np.ndarray] = None
    Z: Optional[np.ndarray] = None
    U1: Optional[np.ndarray] = None
    U2: Optional[np.ndarray] = None
    seed: int = 0
    noise_off: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def components(self) -> dict:
        out = {}
        for name in ("X", "Y", "eta", "Z", "U1", "U2"):
            arr = getattr(self, name)
            if arr is not None:
                out[name] = arr
        return out

    def to_csv(self) -> str:
        """Columns (t, component, mode, value); modes are 1-based."""
        buf = io.StringIO()
        buf.write("t,component,mode,value\n")
        for name, arr in self.components().items():
            for i, t in enumerate(self.t):
                row = arr[i]
                for k in range(row.shape[-1]):
                    buf.write(f"{t:.17g},{name},{k + 1},{row[k]:.17g}\n")
        return buf.getvalue()

    def to_npy_bytes(self) -> dict:
        """Little-endian float64 binary export, one .npy payload per component."""
        out = {}
        for name, arr in self.components().items():
            b = io.BytesIO()
            np.save(b, arr.astype("<f8"))
            out[name] = b.getvalue()
        b = io.BytesIO()
        np.save(b, self.t.astype("<f8"))
        out["t"] = b.getvalue()
        return out


def _time_grid(T: float, dt: float):
    if T <= 0 or dt <= 0:
        raise ConfigError("need T > 0 and dt > 0")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        n_steps = int(np.ceil(T / dt - 1e-12))
    return n_steps, np.linspace(0.0, n_steps * dt, n_steps + 1)


def _grid_values(model, coeffs, component):
    return model.synthesize(coeffs, component)


class SlowFastEngine:
    """Batched stepper for the controlled slow-fast system.

    One engine advances a chunk of paths in lockstep. Noise blocks are keyed
    by (seed, stream, step, chunk) so distinct chunks are independent and any
    partition of paths into fixed-size chunks draws the same numbers.
    """

    def __init__(
        self,
        model: ModelSpec,
        regime: RegimeParams,
        control: ControlSpec,
        x0: np.ndarray,
        y0: np.ndarray,
        dt: float,
        seed: int,
        n_paths: int = 1,
        chunk: int = 0,
        noise_off: bool = False,
        track_weights: bool = False,
    ):
        if dt > regime.delta / 10.0 + 1e-15:
            raise StepSizeError(
                f"dt={dt} too large for delta={regime.delta}: need dt <= delta/10"
            )
        self.model = model
        self.regime = regime
        self.control = control
        self.dt = dt
        self.seed = seed
        self.chunk = chunk
        self.noise_off = noise_off
        self.track_weights = track_weights
        P = n_paths
        self.X = np.broadcast_to(np.asarray(x0, dtype=float), (P, model.n_slow)).copy()
        self.Y = np.broadcast_to(np.asarray(y0, dtype=float), (P, model.n_fast)).copy()
        self.E1 = np.exp(-model.basis_slow.eigenvalues * dt)
        self.E2 = np.exp(-model.basis_fast.eigenvalues * dt / regime.delta)
        self.sqrt_eps = np.sqrt(regime.epsilon)
        self.sqrt_delta = np.sqrt(regime.delta)
        # Girsanov accumulators: gir_lin = h sum <u, dW>, gir_quad = h^2/2 sum ||u||^2 dt
        self.gir_lin = np.zeros(P)
        self.gir_quad = np.zeros(P)
        self.energy = np.zeros(P)
        self.clipped = np.zeros(P, dtype=bool)
        self.k = 0
        self.last_u = None
        self._f_zero = model.f.family.value == "zero"
        self._g_zero = model.g.family.value == "zero"
        self._need_grids = not (self._f_zero and self._g_zero and model.sigma.is_constant)

    def step(self):
        m, reg, dt = self.model, self.regime, self.dt
        t = self.k * dt
        if self._need_grids:
            Xg = _grid_values(m, self.X, Component.SLOW)
            Yg = _grid_values(m, self.Y, Component.FAST)
        else:
            Xg = Yg = None
        Fc = 0.0 if self._f_zero else m.analyze(m.f.value(Xg, Yg), Component.SLOW)
        Gc = 0.0 if self._g_zero else m.analyze(m.g.value(Xg, Yg), Component.FAST)

        active = self.control.kind != "zero"
        if active:
            u1, u2 = self.control.evaluate(t, self.Y, m.n_slow, m.n_fast)
            if np.isfinite(self.control.energy_cap):
                u1[self.clipped] = 0.0
                u2[self.clipped] = 0.0
                step_energy = dt * ((u1**2).sum(axis=1) + (u2**2).sum(axis=1))
                breach = self.energy + step_energy > self.control.energy_cap
                newly = breach & ~self.clipped
                if newly.any():
                    u1[newly] = 0.0
                    u2[newly] = 0.0
                    step_energy = np.where(newly, 0.0, step_energy)
                    self.clipped |= newly
                self.energy += step_energy
            else:
                self.energy += dt * ((u1**2).sum(axis=1) + (u2**2).sum(axis=1))
            self.last_u = (u1, u2)

        P = self.X.shape[0]
        if self.noise_off:
            dW1 = np.zeros((P, m.n_slow))
            dW2 = np.zeros((P, m.n_fast))
        else:
            sq = np.sqrt(dt)
            dW1 = sq * rng.normal_block(self.seed, rng.STREAM_SLOW_NOISE, self.k, self.chunk, (P, m.n_slow))
            dW2 = sq * rng.normal_block(self.seed, rng.STREAM_FAST_NOISE, self.k, self.chunk, (P, m.n_fast))

        # the control shifts the same increment the weight compensates
        if active:
            z1 = dW1 + reg.h * dt * u1
            z2 = dW2 + reg.h * dt * u2
        else:
            z1, z2 = dW1, dW2
        if m.sigma.is_constant:
            sz1 = m.sigma.c * z1
        else:
            sg = m.sigma.value(Xg, Yg)
            sz1 = m.analyze(sg * _grid_values(m, z1, Component.SLOW), Component.SLOW)

        if self._f_zero:
            self.X = self.E1 * (self.X + self.sqrt_eps * sz1)
        else:
            self.X = self.E1 * (self.X + dt * Fc + self.sqrt_eps * sz1)
        if self._g_zero:
            self.Y = self.E2 * (self.Y + z2 / self.sqrt_delta)
        else:
            self.Y = self.E2 * (self.Y + (dt / reg.delta) * Gc + z2 / self.sqrt_delta)

        if self.track_weights and active:
            h = reg.h
            self.gir_lin += h * ((u1 * dW1).sum(axis=1) + (u2 * dW2).sum(axis=1))
            self.gir_quad += 0.5 * h * h * dt * ((u1**2).sum(axis=1) + (u2**2).sum(axis=1))
        self.k += 1

    @property
    def log_weight(self) -> np.ndarray:
        """Single-tilt Girsanov log weight: -h sum<u, dW> - h^2/2 sum ||u||^2 dt."""
        return -self.gir_lin - self.gir_quad

    def log_weight_mixture(self) -> np.ndarray:
        """Exact log likelihood ratio for the symmetric two-point tilt mixture.

        With per-path control sign s and effective increments z = dW + h u dt,
        the mixture density over {+u, -u} gives weight exp(H) / cosh(h sum<u, z>)
        with H the quadratic accumulator; the cosh argument is sign-free.
        """
        g = self.gir_lin + 2.0 * self.gir_quad
        ag = np.abs(g)
        logcosh = ag + np.log1p(np.exp(-2.0 * ag)) - np.log(2.0)
        return self.gir_quad - logcosh


def simulate_slow_fast(
    model: ModelSpec,
    regime: RegimeParams,
    control: ControlSpec,
    x0: Field,
    y0: Field,
    T: float,
    dt: float,
    seed: int,
    noise_off: bool = False,
    store_stride: int = 1,
) -> PathBundle:
    """One controlled slow-fast trajectory on [0, T].

    ``store_stride > 1`` stores every stride-th grid point (the dynamics still
    advance at dt); the stored states are exact states of the fine chain.
    """
    check_basis(x0, model.basis_slow)
    check_basis(y0, model.basis_fast)
    n_steps, t_full = _time_grid(T, dt)
    engine = SlowFastEngine(model, regime, control, x0.coeffs, y0.coeffs, dt, seed, noise_off=noise_off)
    keep = np.arange(0, n_steps + 1, store_stride)
    if keep[-1] != n_steps:
        keep = np.append(keep, n_steps)
    S = len(keep)
    X = np.empty((S, model.n_slow))
    Y = np.empty((S, model.n_fast))
    U1 = np.zeros((S, model.n_slow))
    U2 = np.zeros((S, model.n_fast))
    X[0], Y[0] = engine.X[0], engine.Y[0]
    pos = 1
    for k in range(n_steps):
        engine.step()
        if pos < S and k + 1 == keep[pos]:
            X[pos], Y[pos] = engine.X[0], engine.Y[0]
            if engine.last_u is not None:
                u1, u2 = engine.last_u
                U1[pos], U2[pos] = u1[0], u2[0]
            pos += 1
    # controls are applied on left endpoints; re-evaluate at stored nodes for export
    if control.kind != "zero":
        u1, u2 = control.evaluate(t_full[keep][0], Y[:1], model.n_slow, model.n_fast)
        U1[0], U2[0] = u1[0], u2[0]
    energy = float(engine.energy[0])
    bundle = PathBundle(
        t=t_full[keep],
        X=X,
        Y=Y,
        U1=U1 if control.kind != "zero" else None,
        U2=U2 if control.kind != "zero" else None,
        seed=seed,
        noise_off=noise_off,
        meta={
            "kind": "slow_fast",
            "epsilon": regime.epsilon,
            "regime": regime.regime,
            "dt": dt,
            "store_stride": store_stride,
            "control_energy": energy,
            "energy_cap_hit": bool(engine.clipped[0]),
        },
    )
    return bundle


def simulate_slow_fast_batch(
    model: ModelSpec,
    regime: RegimeParams,
    control: ControlSpec,
    x0: Field,
    y0: Field,
    T: float,
    dt: float,
    seed: int,
    n_paths: int,
    noise_off: bool = False,
    store_stride: int = 1,
) -> list:
    """Independent controlled trajectories advanced in lockstep.

    Returns one PathBundle per path; path i of a batch equals path i of any
    other batch with the same seed and chunk layout.
    """
    check_basis(x0, model.basis_slow)
    check_basis(y0, model.basis_fast)
    n_steps, t_full = _time_grid(T, dt)
    keep = np.arange(0, n_steps + 1, store_stride)
    if keep[-1] != n_steps:
        keep = np.append(keep, n_steps)
    S, P = len(keep), n_paths
    X = np.empty((S, P, model.n_slow))
    Y = np.empty((S, P, model.n_fast))
    engine = SlowFastEngine(
        model, regime, control, x0.coeffs, y0.coeffs, dt, seed, n_paths=P, noise_off=noise_off
    )
    X[0], Y[0] = engine.X, engine.Y
    pos = 1
    for k in range(n_steps):
        engine.step()
        if pos < S and k + 1 == keep[pos]:
            X[pos], Y[pos] = engine.X, engine.Y
            pos += 1
    t = t_full[keep]
    bundles = []
    for p in range(P):
        bundles.append(
            PathBundle(
                t=t.copy(),
                X=X[:, p].copy(),
                Y=Y[:, p].copy(),
                seed=seed,
                noise_off=noise_off,
                meta={"kind": "slow_fast", "path_index": p, "dt": dt, "store_stride": store_stride},
            )
        )
    return bundles


class FrozenFastEngine:
    """Batched stepper for the frozen fast process in natural time.

    Exact linear factorization: Y_{k+1} = e^{-a dt} Y_k + phi1(a) G + zeta,
    with phi1(a) = (1 - e^{-a dt})/a and zeta ~ N(0, (1 - e^{-2 a dt})/(2a)),
    which is the exact discrete OU transition when g = 0.
    """

    def __init__(self, model, x: np.ndarray, y0: np.ndarray, dt: float, seed: int,
                 n_paths: int = 1, chunk: int = 0, noise_off: bool = False,
                 stream: int = rng.STREAM_FROZEN_NOISE):
        self.model = model
        self.dt = dt
        self.seed = seed
        self.chunk = chunk
        self.noise_off = noise_off
        self.stream = stream
        a = model.basis_fast.eigenvalues
        self.E = np.exp(-a * dt)
        self.phi1 = (1.0 - self.E) / a
        self.noise_scale = np.sqrt((1.0 - self.E**2) / (2.0 * a))
        self.x_grid = model.synthesize(np.asarray(x, dtype=float), Component.SLOW)
        self.g_is_zero = model.g.dy_bound == 0.0 and model.g.dx_bound == 0.0 and model.g.family.value == "zero"
        self.Y = np.broadcast_to(np.asarray(y0, dtype=float), (n_paths, model.n_fast)).copy()
        self.k = 0

    def g_coeffs(self):
        m = self.model
        if self.g_is_zero:
            return 0.0
        Yg = _grid_values(m, self.Y, Component.FAST)
        return m.analyze(m.g.value(self.x_grid, Yg), Component.FAST)

    def step(self):
        m = self.model
        drift = self.g_coeffs()
        if self.noise_off:
            zeta = 0.0
        else:
            zeta = self.noise_scale * rng.normal_block(
                self.seed, self.stream, self.k, self.chunk, self.Y.shape
            )
        if self.g_is_zero:
            self.Y = self.E * self.Y + zeta
        else:
            self.Y = self.E * self.Y + self.phi1 * drift + zeta
        self.k += 1


def simulate_frozen_fast(
    model: ModelSpec,
    x: Field,
    y0: Field,
    T: float,
    dt: float,
    seed: int,
    noise_off: bool = False,
) -> PathBundle:
    """Fast process with the slow component frozen at x, in natural time."""
    check_basis(x, model.basis_slow)
    check_basis(y0, model.basis_fast)
    n_steps, t = _time_grid(T, dt)
    engine = FrozenFastEngine(model, x.coeffs, y0.coeffs, dt, seed, noise_off=noise_off)
    Y = np.empty((n_steps + 1, model.n_fast))
    Y[0] = engine.Y[0]
    for k in range(n_steps):
        engine.step()
        Y[k + 1] = engine.Y[0]
    return PathBundle(
        t=t,
        Y=Y,
        seed=seed,
        noise_off=noise_off,
        meta={"kind": "frozen_fast", "frozen_x": x.coeffs.copy(), "dt": dt},
    )


def simulate_first_variation(
    model: ModelSpec,
    x: Field,
    y_path: PathBundle,
    v: Field,
    dt: float,
) -> PathBundle:
    """Directional derivative of the frozen fast flow along v on y_path's grid.

    The update mirrors the frozen-fast scheme exactly, so it is the literal
    derivative of the discrete flow map with respect to the initial state.
    Deterministic given the realized y_path.
    """
    check_basis(x, model.basis_slow)
    check_basis(v, model.basis_fast)
    if y_path.Y is None:
        raise GridMismatchError("y_path does not carry a fast trajectory")
    if abs(y_path.dt - dt) > 1e-12:
        raise GridMismatchError(f"dt={dt} does not match y_path grid dt={y_path.dt}")
    a = model.basis_fast.eigenvalues
    E = np.exp(-a * dt)
    phi1 = (1.0 - E) / a
    x_grid = model.synthesize(x.coeffs, Component.SLOW)
    steps = len(y_path.t) - 1
    Z = np.empty((steps + 1, model.n_fast))
    Z[0] = v.coeffs
    g_active = model.g.dy_bound > 0.0
    for k in range(steps):
        if g_active:
            Yg = model.synthesize(y_path.Y[k], Component.FAST)
            mult = model.g.dy(x_grid, Yg)
            Zg = model.synthesize(Z[k], Component.FAST)
            coupling = model.analyze(mult * Zg, Component.FAST)
            Z[k + 1] = E * Z[k] + phi1 * coupling
        else:
            Z[k + 1] = E * Z[k]
    return PathBundle(
        t=y_path.t.copy(),
        Z=Z,
        seed=y_path.seed,
        noise_off=True,
        meta={"kind": "first_variation", "dt": dt},
    )


def compute_eta(x_path: PathBundle, xbar_path: PathBundle, regime: RegimeParams) -> PathBundle:
    """Normalized deviation (X - Xbar) / (sqrt(eps) h) on the shared grid."""
    if x_path.X is None or xbar_path.X is None:
        raise GridMismatchError("both bundles must carry a slow trajectory")
    if len(x_path.t) != len(xbar_path.t) or not np.allclose(x_path.t, xbar_path.t, atol=1e-12):
        raise GridMismatchError("bundles do not share a time grid")
    eta = (x_path.X - xbar_path.X) / regime.eta_scale
    return PathBundle(
        t=x_path.t.copy(),
        eta=eta,
        seed=x_path.seed,
        noise_off=x_path.noise_off,
        meta={"kind": "eta", "epsilon": regime.epsilon, "regime": regime.regime},
    )


def control_energy(bundle: PathBundle) -> float:
    """Trapezoid integral of ||u1||^2 + ||u2||^2 over the stored grid."""
    total = np.zeros(len(bundle.t))
    if bundle.U1 is not None:
        total += (bundle.U1**2).sum(axis=1)
    if bundle.U2 is not None:
        total += (bundle.U2**2).sum(axis=1)
    return float(np.trapezoid(total, bundle.t))

"""FastAPI service wrapping the core package.

Each endpoint runs one batch operation synchronously and returns the result
summary plus named text artifacts; clients (the bundled CLI in particular)
write the artifacts to disk. Hypothesis violations map to HTTP 409,
configuration problems to 422.
"""

from __future__ import annotations

import json

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..averaging import InvariantPolicy, sample_invariant, solve_averaged
from ..config import BuiltContext, build_context, config_hash
from ..dynamics import compute_eta, simulate_slow_fast, zero_control
from ..errors import ConfigError, HypothesisError, MdspdeError
from ..kolmogorov import psi2_zero_matrix
from ..mdp import (
    QPolicy,
    RateEvaluator,
    SmoothPath,
    control_cost,
    optimal_controls,
)
from ..model import validate_hypotheses
from ..occupation import build_occupation, decoupling_test
from ..rare_event import EventSpec, SearchConfig, estimate_importance, estimate_plain, mdp_asymptote
from ..spectral import Field
from . import schemas as S


def _json_text(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _zero_field(basis):
    return Field(np.zeros(basis.n), basis)


def _psi_path(ctx: BuiltContext, spec: S.PsiSpec) -> SmoothPath:
    return SmoothPath.linear_mode(ctx.model.basis_slow, ctx.T, spec.dt, spec.mode, spec.slope)


def _event(spec: S.EventModel) -> EventSpec:
    return EventSpec(kind=spec.kind, r=spec.r, mode=spec.mode)


def create_app() -> FastAPI:
    app = FastAPI(title="mdspde", version=__version__)

    @app.exception_handler(HypothesisError)
    async def _hypothesis_handler(request: Request, exc: HypothesisError):
        detail = {"error": "hypothesis_failure", "message": str(exc)}
        if exc.report is not None:
            detail["report"] = exc.report.to_dict()
        return JSONResponse(status_code=409, content=detail)

    @app.exception_handler(ConfigError)
    async def _config_handler(request: Request, exc: ConfigError):
        return JSONResponse(status_code=422, content={"error": "config", "message": str(exc)})

    @app.exception_handler(MdspdeError)
    async def _generic_handler(request: Request, exc: MdspdeError):
        return JSONResponse(status_code=422, content={"error": "invalid", "message": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": __version__}

    @app.post("/validate", response_model=S.ValidateResponse)
    def validate(req: S.ValidateRequest):
        ctx = build_context(req.config)
        report = validate_hypotheses(ctx.model).to_dict()
        return S.ValidateResponse(
            report=report,
            overall_pass=report["overall_pass"],
            files={"hypothesis_report.json": _json_text(report)},
        )

    @app.post("/simulate", response_model=S.SimulateResponse)
    def simulate(req: S.SimulateRequest):
        ctx = build_context(req.config)
        bundle = simulate_slow_fast(
            ctx.model,
            ctx.regime,
            zero_control(),
            _zero_field(ctx.model.basis_slow),
            _zero_field(ctx.model.basis_fast),
            ctx.T,
            ctx.dt,
            ctx.seed,
            noise_off=req.noise_off,
            store_stride=req.store_stride,
        )
        files = {f"bundle_seed{ctx.seed}.csv": bundle.to_csv()}
        if req.with_eta:
            xbar = solve_averaged(ctx.model, _zero_field(ctx.model.basis_slow), ctx.T, ctx.dt)
            keep = np.searchsorted(xbar.t, bundle.t)
            xbar.t, xbar.X = xbar.t[keep], xbar.X[keep]
            eta = compute_eta(bundle, xbar, ctx.regime)
            files[f"eta_seed{ctx.seed}.csv"] = eta.to_csv()
        return S.SimulateResponse(
            seed=ctx.seed,
            steps=len(bundle.t) - 1,
            control_energy=bundle.meta.get("control_energy", 0.0),
            energy_cap_hit=bundle.meta.get("energy_cap_hit", False),
            files=files,
        )

    @app.post("/average", response_model=S.AverageResponse)
    def average(req: S.AverageRequest):
        ctx = build_context(req.config)
        xbar = solve_averaged(ctx.model, _zero_field(ctx.model.basis_slow), ctx.T, ctx.dt)
        return S.AverageResponse(
            terminal_norm=float(np.linalg.norm(xbar.X[-1])),
            files={"averaged.csv": xbar.to_csv()},
        )

    @app.post("/invariant", response_model=S.InvariantResponse)
    def invariant(req: S.InvariantRequest):
        ctx = build_context(req.config)
        inv = sample_invariant(
            ctx.model,
            _zero_field(ctx.model.basis_slow),
            count=req.count,
            burn_in=req.burn_in,
            thinning=req.thinning,
            dt=req.dt if req.dt is not None else 0.02,
            seed=ctx.seed,
        )
        return S.InvariantResponse(
            count=inv.count,
            mode_means=inv.samples.mean(axis=0).tolist(),
            mode_variances=inv.samples.var(axis=0, ddof=1).tolist(),
            files={f"invariant_seed{ctx.seed}_n{inv.count}.csv": inv.to_csv()},
        )

    @app.post("/psi2", response_model=S.Psi2Response)
    def psi2(req: S.Psi2Request):
        ctx = build_context(req.config)
        res = psi2_zero_matrix(
            ctx.model,
            _zero_field(ctx.model.basis_slow),
            _zero_field(ctx.model.basis_fast),
            m=req.m,
            mc_paths=req.mc_paths,
            t_max=req.t_max,
            dt=req.dt,
            seed=ctx.seed,
        )
        return S.Psi2Response(
            entries=res.entries.tolist(),
            se=res.se.tolist(),
            tail_bound=res.tail_bound,
            norm_bound=res.norm_bound,
            files={f"psi2_seed{ctx.seed}_n{req.mc_paths}.csv": res.to_csv()},
        )

    @app.post("/rate", response_model=S.RateResponse)
    def rate(req: S.RateRequest):
        ctx = build_context(req.config)
        psi = _psi_path(ctx, req.psi)
        xbar = solve_averaged(ctx.model, _zero_field(ctx.model.basis_slow), ctx.T, min(ctx.dt, 1e-3))
        report = RateEvaluator(ctx.model, ctx.regime, xbar, psi.t).rate(psi)
        return S.RateResponse(
            regime=report.regime,
            S=report.S,
            files={"rate.json": _json_text(report.to_dict())},
        )

    @app.post("/controls", response_model=S.ControlsResponse)
    def controls(req: S.ControlsRequest):
        ctx = build_context(req.config)
        psi = _psi_path(ctx, req.psi)
        xbar = solve_averaged(ctx.model, _zero_field(ctx.model.basis_slow), ctx.T, min(ctx.dt, 1e-3))
        ev = RateEvaluator(ctx.model, ctx.regime, xbar, psi.t)
        report = ev.rate(psi)
        ctrl = optimal_controls(ctx.model, ctx.regime, psi, xbar, evaluator=ev)
        cost = control_cost(ctx.model, ctx.regime, ctrl, xbar, grid_t=psi.t)
        # control profile at the anchor state y = 0
        lines = ["t,mode,v1,v2"]
        yz = np.zeros((1, ctx.model.n_fast))
        t_nodes = psi.t[:: max(1, len(psi.t) // 200)]
        for t in t_nodes:
            u1, u2 = ctrl.evaluate(float(t), yz, ctx.model.n_slow, ctx.model.n_fast)
            for k in range(ctx.model.n_slow):
                lines.append(f"{t:.17g},{k + 1},{u1[0, k]:.17g},{u2[0, k]:.17g}")
        payload = {"cost": cost.cost, "cost_se": cost.se, "rate": report.S, "regime": ctx.regime.regime}
        return S.ControlsResponse(
            cost=cost.cost,
            cost_se=cost.se,
            rate=report.S,
            files={"controls.json": _json_text(payload), "controls.csv": "\n".join(lines) + "\n"},
        )

    @app.post("/occupation", response_model=S.OccupationResponse)
    def occupation(req: S.OccupationRequest):
        ctx = build_context(req.config)
        delta_occ = req.delta_occ if req.delta_occ is not None else ctx.regime.Delta_occ
        bundle = simulate_slow_fast(
            ctx.model,
            ctx.regime,
            zero_control(),
            _zero_field(ctx.model.basis_slow),
            _zero_field(ctx.model.basis_fast),
            ctx.T + delta_occ,
            ctx.dt,
            ctx.seed,
            store_stride=req.store_stride,
        )
        occ = build_occupation(bundle, ctx.regime, Delta=delta_occ)
        xbar = solve_averaged(ctx.model, _zero_field(ctx.model.basis_slow), ctx.T + delta_occ, min(ctx.dt, 1e-3))
        report = decoupling_test(
            occ, ctx.model, xbar, ctx.regime, modes_checked=req.modes_checked, seed=ctx.seed
        )
        return S.OccupationResponse(
            total_mass=occ.total_mass,
            diagnostic=report.diagnostic,
            pass_fraction=report.pass_fraction,
            scaling_ok=report.scaling_ok,
            files={
                f"occupation_seed{ctx.seed}.csv": occ.to_csv(),
                "decoupling.json": _json_text(report.to_dict()),
            },
        )

    @app.post("/estimate", response_model=S.EstimateResponse)
    def estimate(req: S.EstimateRequest):
        ctx = build_context(req.config)
        event = _event(req.event)
        if req.method == "plain":
            est = estimate_plain(ctx.model, ctx.regime, event, req.n, ctx.T, ctx.dt, ctx.seed)
        else:
            if req.psi is not None:
                psi = _psi_path(ctx, req.psi)
            else:
                mode = event.mode if event.kind == "terminal_mode" else 1
                psi = SmoothPath.linear_mode(ctx.model.basis_slow, ctx.T, 1e-3, mode, event.r / ctx.T)
            est = estimate_importance(ctx.model, ctx.regime, event, psi, req.n, ctx.T, ctx.dt, ctx.seed)
        name = f"estimate_{req.method}_seed{ctx.seed}_n{req.n}.json"
        return S.EstimateResponse(
            p_hat=est.p_hat,
            rel_err=est.relative_error,
            n=est.n_paths,
            method=est.method,
            exponent_diag=est.exponent_diag,
            ci_upper=est.ci_upper,
            mean_weight=est.mean_weight,
            files={name: _json_text(est.to_dict())},
        )

    @app.post("/asymptote", response_model=S.AsymptoteResponse)
    def asymptote(req: S.AsymptoteRequest):
        ctx = build_context(req.config)
        res = mdp_asymptote(
            ctx.model, ctx.regime, _event(req.event), SearchConfig(T=ctx.T, dt=req.dt)
        )
        return S.AsymptoteResponse(
            S=res.S,
            c_star=res.c_star,
            mode=res.mode,
            per_mode={str(k): float(v) for k, v in res.per_mode.items()},
            files={"asymptote.json": _json_text(res.to_dict())},
        )

    return app


app = create_app()

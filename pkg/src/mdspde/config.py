"""Run configuration: INI-style sectioned key-value files, validated strictly.

One config describes one model plus regime, run and output settings. Unknown
sections or keys are rejected. Numbers are written in full decimal, booleans
literal. The seed falls back to the MDSPDE_SEED environment variable when the
run section does not carry one.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass

from .dynamics import RegimeParams, make_regime
from .errors import ConfigError
from .model import ModelSpec, build_model, diffusion, reaction
from .service.schemas import RunConfig
from .spectral import Component, DomainSpec, build_basis

DEFAULT_SEED = 12345


def parse_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep key case (run.T)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {"model", "regime", "run", "output"}
    sections = set(parser.sections())
    unknown = sections - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if "model" not in sections:
        raise ConfigError("config must contain a [model] section")
    payload = {name: dict(parser.items(name)) for name in sections}
    try:
        return RunConfig(**payload)
    except Exception as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_hash(cfg: RunConfig) -> str:
    canon = json.dumps(cfg.model_dump(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


@dataclass
class BuiltContext:
    model: ModelSpec
    regime: RegimeParams
    T: float
    dt: float
    seed: int
    paths: int
    config: RunConfig

    @property
    def hash(self) -> str:
        return config_hash(self.config)


def _reaction_from(section, prefix: str):
    family = getattr(section, f"{prefix}_family")
    params = {}
    for name in ("b", "alpha", "beta", "kappa"):
        value = getattr(section, f"{prefix}_{name}")
        if value is not None:
            params[name] = value
    return reaction(family, **params)


def _diffusion_from(section):
    params = {}
    for name in ("c", "c1", "c2"):
        value = getattr(section, f"sigma_{name}")
        if value is not None:
            params[name] = value
    return diffusion(section.sigma_family, **params)


def build_context(cfg: RunConfig) -> BuiltContext:
    m = cfg.model
    domain = DomainSpec(length=m.length, bc_slow=m.bc_slow, bc_fast=m.bc_fast)
    basis_slow = build_basis(domain, Component.SLOW, m.modes, m.c_slow, m.mass_shift_slow)
    basis_fast = build_basis(domain, Component.FAST, m.modes, m.c_fast, m.mass_shift_fast)
    model = build_model(
        domain,
        basis_slow,
        basis_fast,
        _reaction_from(m, "f"),
        _reaction_from(m, "g"),
        _diffusion_from(m),
        m.quad_points or 0,
    )
    r = cfg.regime
    regime = make_regime(
        epsilon=r.epsilon,
        regime=r.regime,
        gamma=r.gamma,
        delta_exponent=r.delta_exponent,
        h_exponent=r.h_exponent,
        occ_exponent=r.occ_exponent,
        delta=r.delta,
        h=r.h,
        Delta_occ=r.delta_occ,
    )
    seed = cfg.run.seed
    if seed is None:
        env = os.environ.get("MDSPDE_SEED")
        seed = int(env) if env else DEFAULT_SEED
    dt = cfg.run.dt if cfg.run.dt is not None else regime.delta / 10.0
    return BuiltContext(
        model=model,
        regime=regime,
        T=cfg.run.T,
        dt=dt,
        seed=seed,
        paths=cfg.run.paths,
        config=cfg,
    )

"""Pydantic request and response models for the service endpoints."""

from __future__ import annotations

from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field


class ModelSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    length: float
    bc_slow: Literal["dirichlet", "neumann"] = "dirichlet"
    bc_fast: Literal["dirichlet", "neumann"] = "dirichlet"
    modes: int = 16
    quad_points: Optional[int] = None
    c_slow: float = 1.0
    c_fast: float = 1.0
    mass_shift_slow: float = 0.0
    mass_shift_fast: float = 0.0
    f_family: Literal["zero", "linear_y", "tanh_sum", "tanh_y_damped"] = "zero"
    f_b: Optional[float] = None
    f_alpha: Optional[float] = None
    f_beta: Optional[float] = None
    f_kappa: Optional[float] = None
    g_family: Literal["zero", "linear_y", "tanh_sum", "tanh_y_damped"] = "zero"
    g_b: Optional[float] = None
    g_alpha: Optional[float] = None
    g_beta: Optional[float] = None
    g_kappa: Optional[float] = None
    sigma_family: Literal["constant", "bounded_sigmoid"] = "constant"
    sigma_c: Optional[float] = None
    sigma_c1: Optional[float] = None
    sigma_c2: Optional[float] = None


class RegimeSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epsilon: float = 0.05
    regime: Literal["R1", "R2"] = "R1"
    gamma: float = 1.0
    delta_exponent: float = 1.5
    h_exponent: float = 0.25
    occ_exponent: float = 0.25
    delta: Optional[float] = None
    h: Optional[float] = None
    delta_occ: Optional[float] = None


class RunSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    T: float = 1.0
    dt: Optional[float] = None
    seed: Optional[int] = None
    paths: int = 1000


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: str = "out"
    formats: str = "csv,json"


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: ModelSection
    regime: RegimeSection = Field(default_factory=RegimeSection)
    run: RunSection = Field(default_factory=RunSection)
    output: OutputSection = Field(default_factory=OutputSection)


class PsiSpec(BaseModel):
    """Parametric target path c * slope * t * e_mode used by rate/controls/IS."""

    model_config = ConfigDict(extra="forbid")

    family: Literal["linear"] = "linear"
    mode: int = 1
    slope: float = 1.0
    dt: float = 1e-4


class EventModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["terminal_norm", "sup_norm", "terminal_mode"]
    r: float
    mode: int = 1


# ---- requests ---------------------------------------------------------------


class ValidateRequest(BaseModel):
    config: RunConfig


class SimulateRequest(BaseModel):
    config: RunConfig
    noise_off: bool = False
    store_stride: int = 1
    with_eta: bool = False


class AverageRequest(BaseModel):
    config: RunConfig


class InvariantRequest(BaseModel):
    config: RunConfig
    count: int = 1000
    burn_in: Optional[float] = None
    thinning: Optional[float] = None
    dt: Optional[float] = None


class Psi2Request(BaseModel):
    config: RunConfig
    m: int = 8
    mc_paths: int = 4
    t_max: Optional[float] = None
    dt: float = 1e-3


class RateRequest(BaseModel):
    config: RunConfig
    psi: PsiSpec


class ControlsRequest(BaseModel):
    config: RunConfig
    psi: PsiSpec


class OccupationRequest(BaseModel):
    config: RunConfig
    modes_checked: int = 4
    delta_occ: Optional[float] = None
    store_stride: int = 1


class EstimateRequest(BaseModel):
    config: RunConfig
    event: EventModel
    method: Literal["plain", "is"] = "plain"
    n: int = 1000
    psi: Optional[PsiSpec] = None


class AsymptoteRequest(BaseModel):
    config: RunConfig
    event: EventModel
    dt: float = 1e-4


# ---- responses --------------------------------------------------------------


class FilePayload(BaseModel):
    """Named text artifacts the client writes to the output directory."""

    files: Dict[str, str] = Field(default_factory=dict)


class ValidateResponse(FilePayload):
    report: dict
    overall_pass: bool


class SimulateResponse(FilePayload):
    seed: int
    steps: int
    control_energy: float
    energy_cap_hit: bool


class AverageResponse(FilePayload):
    terminal_norm: float


class InvariantResponse(FilePayload):
    count: int
    mode_means: List[float]
    mode_variances: List[float]


class Psi2Response(FilePayload):
    entries: List[List[float]]
    se: List[List[float]]
    tail_bound: float
    norm_bound: float


class RateResponse(FilePayload):
    regime: str
    S: float


class ControlsResponse(FilePayload):
    cost: float
    cost_se: float
    rate: float


class OccupationResponse(FilePayload):
    total_mass: float
    diagnostic: float
    pass_fraction: float
    scaling_ok: bool


class EstimateResponse(FilePayload):
    p_hat: float
    rel_err: float
    n: int
    method: str
    exponent_diag: float
    ci_upper: Optional[float] = None
    mean_weight: Optional[float] = None


class AsymptoteResponse(FilePayload):
    S: float
    c_star: float
    mode: int
    per_mode: Dict[str, float]

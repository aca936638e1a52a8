"""Experiment config files: JSON validated by strict pydantic models.

Every default is resolved on load, so `resolved(cfg)` alone reproduces a run.
"""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from dynamics import ATOL, METHODS, RTOL
from errors import ConfigError

log = logging.getLogger(__name__)

TASKS = ("rates", "evolve", "trajectories", "steady", "sweep")
RATES_ONLY_MODELS = ("dispersive",)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# --- per-model parameters (field names are the builder keywords) ---

class ThreeLevelParams(_Strict):
    Delta: float
    Omega: float
    nu: float = 0.0
    GammaP: float = Field(ge=0)
    GammaS: float = Field(gt=0)


class BitflipParams(_Strict):
    J: float = Field(gt=0)
    Omega: float
    GammaP: float = Field(ge=0)
    GammaS: float = Field(gt=0)
    loss_channel: Literal["sigma_minus", "sigma_y"] = "sigma_minus"


class VslqParams(_Strict):
    W: float = Field(gt=0)
    delta: float = Field(gt=0)
    Omega: float
    GammaP: float = Field(ge=0)
    GammaS: float = Field(gt=0)
    dim: int = Field(3, ge=3)


class CatTwoPhotonParams(_Strict):
    Omega2: float
    GammaP: float = Field(ge=0)
    Gamma2: float = Field(gt=0)
    dim: Optional[int] = Field(None, ge=4)


class CatStatesParams(_Strict):
    alpha: float
    dim: Optional[int] = Field(None, ge=4)


class DispersiveParams(_Strict):
    kappa: float = Field(gt=0)
    chi: float
    nbar: float = Field(ge=0)
    OmegaR: float
    Delta_c: float
    T2: float = Field(gt=0)


MODEL_PARAMS: dict[str, type[_Strict]] = {
    "three_level": ThreeLevelParams,
    "bitflip_ring": BitflipParams,
    "bitflip_ring_reduced": BitflipParams,
    "vslq": VslqParams,
    "cat_two_photon": CatTwoPhotonParams,
    "cat_states": CatStatesParams,
    "dispersive": DispersiveParams,
}


# --- run settings ---

class TimeGrid(_Strict):
    t_final: float = Field(gt=0)
    n_points: int = Field(101, ge=2)
    t_start: float = 0.0

    @model_validator(mode="after")
    def _ordered(self):
        if not self.t_start < self.t_final:
            raise ValueError(f"t_start={self.t_start} must be < t_final={self.t_final}")
        return self

    def grid(self, t_final: float | None = None) -> np.ndarray:
        return np.linspace(self.t_start, self.t_final if t_final is None else t_final, self.n_points)


class IntegratorConfig(_Strict):
    method: Literal[METHODS] = "rk45"
    rtol: float = Field(RTOL, gt=0)
    atol: float = Field(ATOL, gt=0)
    max_step: Optional[float] = Field(None, gt=0)


class TrajectoryConfig(_Strict):
    n_traj: int = Field(1000, ge=1)
    method: Literal["auto", "propagator", "rk45"] = "auto"
    keep_density: bool = False


class NoiseConfig(_Strict):
    """1/f dephasing h(t) n on the named modes; give either amplitude or target_T2R."""
    amplitude: Optional[float] = Field(None, ge=0)
    target_T2R: Optional[float] = Field(None, gt=0)
    alpha: float = Field(1.0, ge=0.5, le=1.5)
    f_min: Optional[float] = Field(None, gt=0)
    f_max: Optional[float] = Field(None, gt=0)
    telegraph_fraction: float = Field(0.0, ge=0, le=1)
    n_realizations: int = Field(400, ge=1)
    modes: Optional[list[str]] = None

    @model_validator(mode="after")
    def _one_strength(self):
        if (self.amplitude is None) == (self.target_T2R is None):
            raise ValueError("give exactly one of amplitude, target_T2R")
        if self.f_min is not None and self.f_max is not None and not self.f_min < self.f_max:
            raise ValueError(f"need f_min < f_max, got [{self.f_min}, {self.f_max}]")
        return self


class FitConfig(_Strict):
    observable: str
    window: Optional[tuple[float, float]] = None
    fixed_offset: Optional[float] = None
    window_starts: list[float] = Field(default_factory=list)


class SweepConfig(_Strict):
    parameter: str
    values: list[float]
    t_final: Optional[list[float]] = None

    @model_validator(mode="after")
    def _lengths(self):
        if not self.values:
            raise ValueError("sweep values must not be empty")
        if self.t_final is not None and len(self.t_final) != len(self.values):
            raise ValueError(f"{len(self.t_final)} t_final entries for {len(self.values)} sweep values")
        return self


class ExperimentConfig(_Strict):
    name: str = Field(min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")
    model: str
    parameters: dict[str, Any]
    task: Literal[TASKS]
    initial: Optional[str] = None
    target: Optional[str] = None
    observables: list[str] = Field(default_factory=list)
    time: Optional[TimeGrid] = None
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)
    trajectories: TrajectoryConfig = Field(default_factory=TrajectoryConfig)
    noise: Optional[NoiseConfig] = None
    fit: Optional[FitConfig] = None
    sweep: Optional[SweepConfig] = None
    seed: int = 0
    threads: int = Field(1, ge=1)
    out: str = "out"

    @model_validator(mode="after")
    def _consistent(self):
        if self.model not in MODEL_PARAMS:
            raise ValueError(f"unknown model {self.model!r}; known: {sorted(MODEL_PARAMS)}")
        if self.model in RATES_ONLY_MODELS and self.task not in ("rates", "sweep"):
            raise ValueError(f"model {self.model!r} only supports the rates and sweep tasks")
        needs_time = self.task in ("evolve", "trajectories") or (
            self.task == "sweep" and self.model not in RATES_ONLY_MODELS)
        if needs_time and self.time is None:
            raise ValueError(f"task {self.task!r} needs a time grid")
        if self.task == "sweep":
            if self.sweep is None:
                raise ValueError("task 'sweep' needs a sweep section")
            if self.sweep.parameter not in MODEL_PARAMS[self.model].model_fields:
                raise ValueError(f"sweep parameter {self.sweep.parameter!r} is not a {self.model} parameter")
        if self.noise is not None and self.task not in ("trajectories", "sweep"):
            raise ValueError("noise applies to the trajectories and sweep tasks only")
        return self


def _describe(exc: ValidationError, prefix: str = "") -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in (prefix, *err["loc"]) if p != "")
        lines.append(f"{path or '<root>'}: {err['msg']}")
    return "; ".join(lines)


def validate_parameters(model: str, parameters: dict[str, Any]) -> dict[str, Any]:
    """Builder keywords for `model` with every default filled in."""
    try:
        schema = MODEL_PARAMS[model]
    except KeyError:
        raise ConfigError(f"unknown model {model!r}; known: {sorted(MODEL_PARAMS)}") from None
    try:
        return schema.model_validate(parameters).model_dump()
    except ValidationError as exc:
        raise ConfigError(_describe(exc, "parameters")) from None


def parse_config(raw: dict[str, Any]) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None
    return cfg.model_copy(update={"parameters": validate_parameters(cfg.model, cfg.parameters)})


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    try:
        cfg = parse_config(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    log.debug("config %s: model=%s task=%s", path, cfg.model, cfg.task)
    return cfg


def with_overrides(cfg: ExperimentConfig, *, seed: int | None = None, threads: int | None = None,
                   out: str | None = None) -> ExperimentConfig:
    update = {k: v for k, v in (("seed", seed), ("threads", threads), ("out", out)) if v is not None}
    return cfg.model_copy(update=update) if update else cfg


def resolved(cfg: ExperimentConfig) -> dict[str, Any]:
    return cfg.model_dump(mode="json")


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable hash of the resolved config minus output-only settings."""
    data = resolved(cfg)
    for key in ("out", "threads"):
        data.pop(key, None)
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

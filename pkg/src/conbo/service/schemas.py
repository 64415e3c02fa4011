"""Pydantic request/response models for the optimization service."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field, model_validator


class TransformConfig(BaseModel):
    kind: Literal["identity", "log-time", "upper-bound", "lower-bound"] = "identity"
    value: float = 0.0


class ConstraintOverride(BaseModel):
    """Per-constraint settings applied on top of a named benchmark."""

    id: str
    delta: float | None = Field(None, gt=0.0, lt=1.0)
    cost: float | None = Field(None, gt=0.0)


class ExternalConstraint(BaseModel):
    """Full constraint declaration for an externally evaluated problem."""

    id: str
    kind: Literal["gaussian-latent", "binomial"]
    delta: float = Field(..., gt=0.0, lt=1.0)
    cost: float = Field(1.0, gt=0.0)
    transform: TransformConfig | None = None
    success_threshold: float | None = Field(None, gt=0.0, lt=1.0)
    fantasy_trials: int | None = Field(None, ge=1)


class ExternalProblem(BaseModel):
    """Problem declaration for runs whose evaluations happen client-side,
    driven through the ask/tell endpoints."""

    bounds: list[tuple[float, float]] = Field(..., min_length=1)
    constraints: list[ExternalConstraint] = Field(default_factory=list)
    objective_cost: float = Field(1.0, gt=0.0)

    @model_validator(mode="after")
    def _check(self):
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError("each lower bound must be strictly below its upper bound")
        ids = [c.id for c in self.constraints]
        if len(set(ids)) != len(ids):
            raise ValueError("constraint ids must be unique")
        return self


class McmcConfig(BaseModel):
    ensemble: int = Field(10, ge=1)
    burnin: int = Field(20, ge=1)


class SearchConfig(BaseModel):
    pool_scan: int = Field(2048, ge=1)
    acq_scan: int = Field(1024, ge=1)
    acq_top: int = Field(10, ge=1)
    acq_refine_steps: int = Field(100, ge=1)
    discretization: int = Field(50, ge=2)
    pmin_samples: int = Field(1000, ge=1)
    fantasies_per_member: int = Field(10, ge=1)
    recommend_scan: int = Field(2048, ge=1)


class RunConfig(BaseModel):
    """One optimization run: a named benchmark or an external problem, a
    mode, budgets, seed, and model settings."""

    problem: str | None = None
    external: ExternalProblem | None = None
    mode: Literal["coupled", "decoupled"] = "decoupled"
    iterations: int = Field(50, ge=1)
    n_init: int | None = Field(None, ge=1)
    seed: int = 0
    constraints: list[ConstraintOverride] = Field(default_factory=list)
    objective_cost: float | None = Field(None, gt=0.0)
    mcmc: McmcConfig = Field(default_factory=McmcConfig)
    search: SearchConfig = Field(default_factory=SearchConfig)
    output_dir: str | None = None

    @model_validator(mode="after")
    def _check(self):
        if (self.problem is None) == (self.external is None):
            raise ValueError("declare exactly one of 'problem' (benchmark name) or 'external'")
        if self.external is not None and self.constraints:
            raise ValueError("constraint overrides apply only to named benchmarks")
        return self


class RunCreated(BaseModel):
    run_id: str
    config: dict


class AskResponse(BaseModel):
    task: str
    x: list[float]


class TellRequest(BaseModel):
    task: str
    x: list[float]
    payload: Any = None


class TellResponse(BaseModel):
    ingested: bool
    record: "IterationRecordModel | None" = None


class IterationRecordModel(BaseModel):
    iter: int
    task: str
    x: list[float]
    observation: Any
    incumbent_x: list[float]
    incumbent_value: float
    feasible: bool
    mode: str
    wall_ms: float


class InitObservationModel(BaseModel):
    x: list[float]
    observation: dict


class InitResult(BaseModel):
    evaluations: list[InitObservationModel]


class TraceResponse(BaseModel):
    seed: int
    init: list[InitObservationModel]
    records: list[IterationRecordModel]


class RecommendationModel(BaseModel):
    x: list[float]
    expected_objective: float
    constraint_probabilities: dict[str, float]
    feasible: bool


class SurfacesResponse(BaseModel):
    resolution: int
    files: dict[str, str]


class ProblemsResponse(BaseModel):
    problems: list[str]


class HealthResponse(BaseModel):
    status: str
    version: str

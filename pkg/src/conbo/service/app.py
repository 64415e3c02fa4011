"""FastAPI service exposing optimization runs.

Benchmark runs evaluate server-side through `/init` and `/step`; external
problems are driven by clients through `/ask` and `/tell`. Sessions live in
process memory and are locked so one evaluation cycle runs at a time.
"""

from __future__ import annotations

import dataclasses
import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..benchmarks import BenchmarkProblem, get_problem, problem_names
from ..constraints import ConstraintSpec, LatentTransform
from ..errors import ConboError, EvaluationFailure, InputError, StateError
from ..optimizer import (
    ConstrainedOptimizer,
    IterationRecord,
    McmcSettings,
    Problem,
    ProblemConstraint,
    SearchSettings,
)
from ..reporting import compute_surfaces, jsonable, render_csv
from .schemas import (
    AskResponse,
    HealthResponse,
    InitObservationModel,
    InitResult,
    IterationRecordModel,
    ProblemsResponse,
    RecommendationModel,
    RunConfig,
    RunCreated,
    SurfacesResponse,
    TellRequest,
    TellResponse,
    TraceResponse,
)


class RunSession:
    def __init__(self, run_id: str, optimizer: ConstrainedOptimizer, config: dict, external: bool):
        self.run_id = run_id
        self.optimizer = optimizer
        self.config = config
        self.external = external
        self.lock = threading.Lock()


def _build_optimizer(config: RunConfig) -> tuple[ConstrainedOptimizer, dict, bool]:
    mcmc = McmcSettings(ensemble=config.mcmc.ensemble, burnin=config.mcmc.burnin)
    search = SearchSettings(**config.search.model_dump())

    if config.problem is not None:
        overrides = {}
        if config.objective_cost is not None:
            overrides["objective_cost"] = config.objective_cost
        bench: BenchmarkProblem = get_problem(config.problem, mode=config.mode, **overrides)
        problem = bench.problem
        by_id = {pc.spec.id: pc for pc in problem.constraints}
        for override in config.constraints:
            if override.id not in by_id:
                raise InputError(f"benchmark {config.problem!r} has no constraint {override.id!r}")
            pc = by_id[override.id]
            changes = {}
            if override.delta is not None:
                changes["delta"] = override.delta
            if override.cost is not None:
                changes["cost"] = override.cost
            if changes:
                pc.spec = dataclasses.replace(pc.spec, **changes)
        external = False
    else:
        ext = config.external
        constraints = []
        for c in ext.constraints:
            transform = (
                LatentTransform(kind=c.transform.kind, value=c.transform.value)
                if c.transform is not None
                else None
            )
            constraints.append(
                ProblemConstraint(
                    spec=ConstraintSpec(
                        id=c.id,
                        kind=c.kind,
                        delta=c.delta,
                        cost=c.cost,
                        transform=transform,
                        success_threshold=c.success_threshold,
                    ),
                    fantasy_trials=c.fantasy_trials,
                )
            )
        problem = Problem(
            bounds=np.asarray(ext.bounds, dtype=float),
            objective=None,
            constraints=constraints,
            mode=config.mode,
            objective_cost=ext.objective_cost,
        )
        external = True

    optimizer = ConstrainedOptimizer(
        problem,
        seed=config.seed,
        n_init=config.n_init,
        mcmc=mcmc,
        search=search,
    )
    effective = _effective_config(config, optimizer)
    return optimizer, effective, external


def _effective_config(config: RunConfig, optimizer: ConstrainedOptimizer) -> dict:
    constraints = [
        {"id": pc.spec.id, "delta": pc.spec.delta, "cost": pc.spec.cost}
        for pc in optimizer.problem.constraints
    ]
    out = {
        "problem": config.problem,
        "external": config.external.model_dump() if config.external is not None else None,
        "mode": config.mode,
        "iterations": config.iterations,
        "n_init": optimizer.n_init,
        "seed": config.seed,
        "constraints": constraints,
        "objective_cost": optimizer.problem.objective_cost,
        "mcmc": config.mcmc.model_dump(),
        "search": config.search.model_dump(),
        "output_dir": config.output_dir,
    }
    return jsonable(out)


def _record_model(record: IterationRecord) -> IterationRecordModel:
    return IterationRecordModel(
        iter=record.index,
        task=record.task,
        x=jsonable(record.x),
        observation=jsonable(record.observation),
        incumbent_x=jsonable(record.incumbent_x),
        incumbent_value=float(record.incumbent_value),
        feasible=bool(record.feasible),
        mode=record.mode,
        wall_ms=float(record.wall_ms),
    )


def create_app() -> FastAPI:
    app = FastAPI(title="conbo", version=__version__)
    sessions: dict[str, RunSession] = {}

    def _session(run_id: str) -> RunSession:
        session = sessions.get(run_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        return session

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.get("/problems", response_model=ProblemsResponse)
    def problems():
        return ProblemsResponse(problems=problem_names())

    @app.post("/runs", response_model=RunCreated)
    def create_run(config: RunConfig):
        try:
            optimizer, effective, external = _build_optimizer(config)
        except (InputError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        run_id = uuid.uuid4().hex
        sessions[run_id] = RunSession(run_id, optimizer, effective, external)
        return RunCreated(run_id=run_id, config=effective)

    @app.post("/runs/{run_id}/init", response_model=InitResult)
    def init_run(run_id: str):
        session = _session(run_id)
        if session.external:
            raise HTTPException(
                status_code=409, detail="external runs are initialized through ask/tell"
            )
        with session.lock:
            try:
                session.optimizer.initialize()
            except EvaluationFailure as exc:
                raise HTTPException(status_code=500, detail=str(exc)) from exc
        return InitResult(
            evaluations=[
                InitObservationModel(x=jsonable(obs.x), observation=jsonable(obs.observation))
                for obs in session.optimizer.init_observations
            ]
        )

    @app.post("/runs/{run_id}/step", response_model=IterationRecordModel)
    def step_run(run_id: str):
        session = _session(run_id)
        if session.external:
            raise HTTPException(status_code=409, detail="external runs are driven through ask/tell")
        with session.lock:
            try:
                record = session.optimizer.step()
            except EvaluationFailure as exc:
                raise HTTPException(status_code=500, detail=str(exc)) from exc
            except StateError as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc
        if record is None:
            raise HTTPException(status_code=409, detail="run is still initializing; call /init")
        return _record_model(record)

    @app.post("/runs/{run_id}/ask", response_model=AskResponse)
    def ask(run_id: str):
        session = _session(run_id)
        with session.lock:
            try:
                task, x = session.optimizer.ask()
            except (StateError, InputError) as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc
        return AskResponse(task=task, x=jsonable(x))

    @app.post("/runs/{run_id}/tell", response_model=TellResponse)
    def tell(run_id: str, request: TellRequest):
        session = _session(run_id)
        payload = request.payload
        if isinstance(payload, list):
            payload = tuple(payload)
        with session.lock:
            try:
                record = session.optimizer.tell(request.task, np.asarray(request.x), payload)
            except (InputError, StateError) as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
        return TellResponse(
            ingested=True, record=_record_model(record) if record is not None else None
        )

    @app.get("/runs/{run_id}/trace", response_model=TraceResponse)
    def trace(run_id: str):
        session = _session(run_id)
        opt = session.optimizer
        return TraceResponse(
            seed=opt.trace.seed,
            init=[
                InitObservationModel(x=jsonable(obs.x), observation=jsonable(obs.observation))
                for obs in opt.init_observations
            ],
            records=[_record_model(r) for r in opt.trace.records],
        )

    @app.get("/runs/{run_id}/recommendation", response_model=RecommendationModel)
    def recommendation(run_id: str):
        session = _session(run_id)
        with session.lock:
            try:
                rec = session.optimizer.recommend()
            except StateError as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc
        return RecommendationModel(
            x=jsonable(rec.x),
            expected_objective=rec.expected_objective,
            constraint_probabilities=rec.constraint_probabilities,
            feasible=rec.feasible,
        )

    @app.get("/runs/{run_id}/surfaces", response_model=SurfacesResponse)
    def surfaces(run_id: str, resolution: int = 50):
        session = _session(run_id)
        with session.lock:
            try:
                grids = compute_surfaces(session.optimizer, resolution)
            except InputError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
        return SurfacesResponse(
            resolution=resolution,
            files={name: render_csv(rows) for name, rows in grids.items()},
        )

    @app.delete("/runs/{run_id}")
    def delete_run(run_id: str):
        _session(run_id)
        del sessions[run_id]
        return {"deleted": run_id}

    return app

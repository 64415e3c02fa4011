"""Sequential constrained Bayesian optimization controller.

The optimizer owns the observation sets, the hyperparameter chains for the
objective and every modeled constraint, and the iteration loop: refresh the
ensembles, build an acquisition snapshot, pick the next input (and task,
when evaluation is decoupled), evaluate or hand the decision to the caller,
ingest the result, and keep a trace with the incumbent recommendation after
every iteration.

Two driving styles are supported. `step()`/`run()` evaluate through the
problem's own evaluator handles. The ask/tell surface exposes the same
decisions to external callers for problems whose evaluations happen
elsewhere: `ask()` returns the next (task, x), `tell()` ingests the outcome.
One evaluation is outstanding at a time; the controller is single-writer.

Internally every model lives on the unit hypercube (the search box is
affinely mapped) and objective targets are standardized, which keeps the
default hyperparameter priors problem independent. All randomness is drawn
from streams keyed by the run seed, the purpose, and the iteration number,
so replaying a run with the same seed reproduces identical decisions no
matter how many times read-only methods are called in between.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .acquisition import (
    AcquisitionSnapshot,
    candidate_pool,
    ensemble_mean,
    make_snapshot,
    maximize_acquisition,
)
from .constraints import (
    BinomialConstraint,
    BooleanOracleConstraint,
    ConstraintSpec,
    GaussianLatentConstraint,
)
from .decoupled import select_task
from .errors import EvaluationFailure, InputError, StateError
from .gp import KernelHyperparameters, PriorGP, fit_gp, log_marginal_likelihood
from .samplers import HyperEnsemble, HyperPrior, slice_sample_hypers, spawn_rngs

COUPLED_TASK = "coupled"
INIT_TASK = "init"
OBJECTIVE_TASK = "objective"

# Stream purposes for keyed rng derivation.
_S_INIT, _S_OBJ_MCMC, _S_CON_MCMC, _S_POOL, _S_ACQ, _S_TASK, _S_EVAL, _S_RECOMMEND = range(8)


@dataclass
class ProblemConstraint:
    """One declared constraint: its spec plus, when the problem is driven
    through `step()`, an evaluator handle. Boolean-oracle constraints carry
    the oracle predicate instead."""

    spec: ConstraintSpec
    evaluator: Callable | None = None
    oracle: Callable | None = None
    fantasy_trials: int | None = None

    def __post_init__(self):
        if self.spec.kind == "boolean-oracle" and self.oracle is None:
            raise InputError("boolean-oracle constraints require an oracle predicate")


@dataclass
class Problem:
    """A constrained minimization problem over a box."""

    bounds: np.ndarray
    objective: Callable | None = None
    constraints: list[ProblemConstraint] = field(default_factory=list)
    mode: str = "coupled"
    objective_cost: float = 1.0

    #: Binomial constraint fed by objective evaluation success/failure, for
    #: objectives that can fail to produce a value at all.
    failure_constraint_id: str | None = None

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float)
        if self.bounds.ndim != 2 or self.bounds.shape[1] != 2:
            raise InputError("bounds must be a (D, 2) array")
        if not np.all(np.isfinite(self.bounds)):
            raise InputError("bounds must be finite")
        if not np.all(self.bounds[:, 0] < self.bounds[:, 1]):
            raise InputError("each lower bound must be strictly below its upper bound")
        if self.mode not in ("coupled", "decoupled"):
            raise InputError("mode must be 'coupled' or 'decoupled'")
        if self.objective_cost <= 0:
            raise InputError("objective_cost must be positive")
        ids = [c.spec.id for c in self.constraints]
        if len(set(ids)) != len(ids):
            raise InputError("constraint ids must be unique")
        if self.failure_constraint_id is not None:
            spec = {c.spec.id: c.spec for c in self.constraints}.get(self.failure_constraint_id)
            if spec is None or spec.kind != "binomial":
                raise InputError("failure_constraint_id must name a binomial constraint")

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]


@dataclass(frozen=True)
class McmcSettings:
    """Hyperparameter-integration schedule: chains per model and transitions
    per chain per iteration (chains are warm-started between iterations)."""

    ensemble: int = 10
    burnin: int = 20

    def __post_init__(self):
        if self.ensemble < 1 or self.burnin < 1:
            raise InputError("ensemble and burnin must be >= 1")


@dataclass(frozen=True)
class SearchSettings:
    """Sizes of the inner searches; defaults balance fidelity and runtime."""

    pool_scan: int = 2048
    acq_scan: int = 1024
    acq_top: int = 10
    acq_refine_steps: int = 100
    discretization: int = 50
    pmin_samples: int = 1000
    fantasies_per_member: int = 10
    recommend_scan: int = 2048

    def __post_init__(self):
        for name in (
            "pool_scan",
            "acq_scan",
            "acq_top",
            "acq_refine_steps",
            "pmin_samples",
            "fantasies_per_member",
            "recommend_scan",
        ):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.discretization < 2:
            raise InputError("discretization must be >= 2")


@dataclass
class Recommendation:
    """Current best guess: the pool point minimizing the expected objective
    among points satisfying every probabilistic constraint, or, if none
    exists, the point with the highest constraint-probability product."""

    x: np.ndarray
    expected_objective: float
    constraint_probabilities: dict[str, float]
    feasible: bool


@dataclass
class IterationRecord:
    """One completed optimization iteration."""

    index: int
    task: str
    x: np.ndarray
    observation: object
    incumbent_x: np.ndarray
    incumbent_value: float
    feasible: bool
    mode: str
    wall_ms: float


@dataclass
class InitObservation:
    """One joint evaluation from the initial design."""

    x: np.ndarray
    observation: dict


@dataclass
class RunTrace:
    seed: int
    records: list[IterationRecord] = field(default_factory=list)


class _Normalizer:
    def __init__(self, bounds: np.ndarray):
        self.lo = bounds[:, 0].copy()
        self.span = bounds[:, 1] - bounds[:, 0]

    def to_unit(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.lo) / self.span

    def to_problem(self, U: np.ndarray) -> np.ndarray:
        return self.lo + np.asarray(U, dtype=float) * self.span


class ObjectiveModel:
    """GP ensemble over the objective with slice-sampled hyperparameters.

    Targets are standardized (centered and scaled) before fitting so the
    default log-amplitude and log-noise priors apply regardless of the
    objective's natural scale.
    """

    def __init__(
        self,
        dim: int,
        prior: HyperPrior | None = None,
        ensemble_size: int = 10,
        fixed_hypers: KernelHyperparameters | None = None,
    ):
        self.dim = dim
        self.prior = prior if prior is not None else HyperPrior.default(dim, with_noise=True)
        self.fixed_hypers = fixed_hypers
        self._X: list[np.ndarray] = []
        self._y: list[float] = []
        start = fixed_hypers if fixed_hypers is not None else self.prior.unpack(self.prior.means())
        self._chain = [start] * ensemble_size
        self._members: list | None = None
        self._center = 0.0
        self._scale = 1.0

    @property
    def n_observations(self) -> int:
        return len(self._y)

    @property
    def inputs(self) -> np.ndarray:
        return np.array(self._X) if self._X else np.zeros((0, self.dim))

    @property
    def targets(self) -> np.ndarray:
        return np.asarray(self._y, dtype=float)

    def add_observation(self, x: np.ndarray, y: float) -> None:
        x = np.asarray(x, dtype=float).ravel()
        if x.shape != (self.dim,):
            raise InputError("observation dimension does not match the model")
        if not np.isfinite(y):
            raise InputError("objective observations must be finite")
        self._X.append(x)
        self._y.append(float(y))
        self._members = None

    def _standardize(self) -> np.ndarray:
        y = np.asarray(self._y, dtype=float)
        self._center = float(np.mean(y)) if y.size else 0.0
        spread = float(np.std(y)) if y.size else 0.0
        self._scale = spread if spread > 0 else 1.0
        return (y - self._center) / self._scale

    def from_model_space(self, value: float | np.ndarray):
        return self._center + self._scale * value

    def _log_lik(self, hypers: KernelHyperparameters) -> float:
        if not self._y:
            return 0.0
        return log_marginal_likelihood(np.array(self._X), self._standardize(), hypers)

    def refresh(self, burnin: int, rng: np.random.Generator) -> None:
        if self.fixed_hypers is None:
            streams = spawn_rngs(rng, len(self._chain))
            self._chain = [
                slice_sample_hypers(self._log_lik, self.prior, h, burnin, r)
                for h, r in zip(self._chain, streams)
            ]
        self._members = None
        self._fit_members()

    def _fit_members(self) -> None:
        if self._y:
            X = np.array(self._X)
            z = self._standardize()
            self._members = [fit_gp(X, z, h) for h in self._chain]
        else:
            self._members = [PriorGP(h) for h in self._chain]

    @property
    def members(self) -> list:
        if self._members is None:
            self._fit_members()
        return self._members

    @property
    def output_scale(self) -> float:
        self.members  # ensure standardization reflects current data
        return self._scale

    @property
    def ensemble(self) -> HyperEnsemble:
        return HyperEnsemble(samples=list(self._chain))


class ConstrainedOptimizer:
    """The optimization loop; see the module docstring for the protocol."""

    def __init__(
        self,
        problem: Problem,
        seed: int = 0,
        n_init: int | None = None,
        mcmc: McmcSettings | None = None,
        search: SearchSettings | None = None,
    ):
        self.problem = problem
        self.seed = int(seed)
        self.mcmc = mcmc if mcmc is not None else McmcSettings()
        self.search = search if search is not None else SearchSettings()
        self.n_init = n_init if n_init is not None else 2 * problem.dim + 1
        if self.n_init < 1:
            raise InputError("n_init must be >= 1")

        self._norm = _Normalizer(problem.bounds)
        self._unit_bounds = np.column_stack(
            [np.zeros(problem.dim), np.ones(problem.dim)]
        )
        self.objective_model = ObjectiveModel(problem.dim, ensemble_size=self.mcmc.ensemble)
        self.constraint_models: dict[str, object] = {}
        for pc in problem.constraints:
            self.constraint_models[pc.spec.id] = self._build_constraint_model(pc)

        self.trace = RunTrace(seed=self.seed)
        self.init_observations: list[InitObservation] = []
        self._init_design: np.ndarray | None = None
        self._init_told = 0
        self._pending: tuple[str, np.ndarray] | None = None
        self._pending_started: float = 0.0
        self._snapshot: AcquisitionSnapshot | None = None
        self._acq_mode = "improvement"
        self._n_evaluations = 0
        self._spent_cost = 0.0

    # ----- construction helpers -------------------------------------------------

    def _build_constraint_model(self, pc: ProblemConstraint):
        spec, dim = pc.spec, self.problem.dim
        if spec.kind == "gaussian-latent":
            return GaussianLatentConstraint(spec, dim, ensemble_size=self.mcmc.ensemble)
        if spec.kind == "binomial":
            return BinomialConstraint(
                spec, dim, ensemble_size=self.mcmc.ensemble, fantasy_trials=pc.fantasy_trials
            )
        oracle = pc.oracle
        return BooleanOracleConstraint(spec, lambda u: bool(oracle(self._norm.to_problem(u))))

    def _stream(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=key))

    # ----- state ------------------------------------------------------------------

    @property
    def initialized(self) -> bool:
        return self._init_told >= self.n_init

    @property
    def iteration(self) -> int:
        return len(self.trace.records)

    @property
    def normalizer(self) -> "_Normalizer":
        return self._norm

    @property
    def tasks(self) -> list[tuple[str, float]]:
        """Fantasizable tasks with their costs: the objective plus every
        modeled (non-oracle) constraint."""
        out = [(OBJECTIVE_TASK, self.problem.objective_cost)]
        for pc in self.problem.constraints:
            if pc.spec.kind != "boolean-oracle":
                out.append((pc.spec.id, pc.spec.cost))
        return out

    def _models(self) -> list:
        return list(self.constraint_models.values())

    # ----- ask / tell ---------------------------------------------------------------

    def ask(self) -> tuple[str, np.ndarray]:
        """Next evaluation to run: a task name and an input point.

        During initialization the task is "init" and the point comes from a
        low-discrepancy design; every task must be evaluated there. After
        that the task is "coupled" (coupled mode) or one of the declared
        tasks (decoupled mode). One ask may be outstanding at a time.
        """
        if self._pending is not None:
            raise StateError("an evaluation is already outstanding; tell() it first")
        self._pending_started = time.perf_counter()
        if not self.initialized:
            if self._init_design is None:
                sampler = qmc.Halton(d=self.problem.dim, scramble=True, seed=self._stream(_S_INIT))
                self._init_design = sampler.random(self.n_init)
            x_unit = self._init_design[self._init_told]
            self._pending = (INIT_TASK, x_unit)
            return INIT_TASK, self._norm.to_problem(x_unit)

        iteration = self.iteration
        self._refresh_models(iteration)
        snapshot = make_snapshot(
            self.objective_model.members,
            self._models(),
            self._unit_bounds,
            self.objective_model.inputs,
            self._stream(_S_POOL, iteration),
            n_scan=self.search.pool_scan,
        )
        candidate = maximize_acquisition(
            snapshot,
            self._stream(_S_ACQ, iteration),
            n_scan=self.search.acq_scan,
            n_top=self.search.acq_top,
            refine_steps=self.search.acq_refine_steps,
        )
        self._snapshot = snapshot
        self._acq_mode = "feasibility" if candidate.feasibility_mode else "improvement"
        if self.problem.mode == "coupled":
            task = COUPLED_TASK
        else:
            decision = select_task(
                snapshot,
                candidate.x,
                self.tasks,
                self.search.fantasies_per_member,
                self.search.pmin_samples,
                self._stream(_S_TASK, iteration),
                n_discretization=self.search.discretization,
            )
            task = decision.task
        self._pending = (task, candidate.x)
        return task, self._norm.to_problem(candidate.x)

    def tell(self, task: str, x: np.ndarray, payload) -> IterationRecord | None:
        """Ingest the outcome of an evaluation.

        For "init" and "coupled" tasks the payload is a mapping with an
        "objective" entry (None if the evaluation failed) and one entry per
        constraint id. For "objective" it is a float or None; for a
        constraint task it is that constraint's raw payload. Completing a
        post-initialization cycle appends a trace record and returns it.
        """
        x = np.asarray(x, dtype=float).ravel()
        if x.shape != (self.problem.dim,):
            raise InputError("told point has the wrong dimension")
        x_unit = self._norm.to_unit(x)
        if np.any(x_unit < -1e-9) or np.any(x_unit > 1 + 1e-9):
            raise InputError("told point lies outside the search box")
        completes = (
            self._pending is not None
            and task == self._pending[0]
            and np.allclose(x_unit, self._pending[1], atol=1e-9)
        )

        self._ingest(task, x_unit, payload)
        self._n_evaluations += 1
        self._spent_cost += self._task_cost(task)

        if not completes:
            return None
        self._pending = None
        if task == INIT_TASK:
            self._init_told += 1
            self.init_observations.append(
                InitObservation(x=x.copy(), observation=dict(payload))
            )
            return None
        rec = self.recommend()
        record = IterationRecord(
            index=self.iteration + 1,
            task=task,
            x=x.copy(),
            observation=payload,
            incumbent_x=rec.x,
            incumbent_value=rec.expected_objective,
            feasible=rec.feasible,
            mode=self._acq_mode,
            wall_ms=(time.perf_counter() - self._pending_started) * 1000.0,
        )
        self.trace.records.append(record)
        return record

    def _task_cost(self, task: str) -> float:
        costs = {cid: cost for cid, cost in self.tasks}
        if task in (INIT_TASK, COUPLED_TASK):
            return self.problem.objective_cost + sum(
                pc.spec.cost for pc in self.problem.constraints
            )
        return costs.get(task, 0.0)

    def _ingest(self, task: str, x_unit: np.ndarray, payload) -> None:
        if task in (INIT_TASK, COUPLED_TASK):
            if not isinstance(payload, dict):
                raise InputError("joint evaluations need a mapping payload")
            if "objective" in payload:
                self._ingest_objective(x_unit, payload["objective"])
            for pc in self.problem.constraints:
                cid = pc.spec.id
                if cid == self.problem.failure_constraint_id:
                    continue
                if cid in payload:
                    self._ingest_constraint(cid, x_unit, payload[cid])
        elif task == OBJECTIVE_TASK:
            self._ingest_objective(x_unit, payload)
        else:
            if task not in self.constraint_models:
                raise InputError(f"unknown task {task!r}")
            self._ingest_constraint(task, x_unit, payload)

    def _ingest_objective(self, x_unit: np.ndarray, value) -> None:
        failed = value is None
        if not failed:
            self.objective_model.add_observation(x_unit, float(value))
        fid = self.problem.failure_constraint_id
        if fid is not None:
            self.constraint_models[fid].add_observation(x_unit, (0 if failed else 1, 1))
        elif failed:
            raise EvaluationFailure(
                f"objective evaluation failed at iteration {self.iteration + 1} and no "
                "failure constraint is declared"
            )

    def _ingest_constraint(self, cid: str, x_unit: np.ndarray, payload) -> None:
        model = self.constraint_models[cid]
        if model.is_oracle:
            return
        if model.kind == "gaussian-latent":
            model.add_observation(x_unit, float(payload))
        else:
            model.add_observation(x_unit, payload)

    # ----- model refresh and recommendation ----------------------------------------

    def _refresh_models(self, iteration: int) -> None:
        self.objective_model.refresh(self.mcmc.burnin, self._stream(_S_OBJ_MCMC, iteration))
        for k, model in enumerate(self._models()):
            model.refresh(self.mcmc.burnin, self._stream(_S_CON_MCMC, k, iteration))

    def current_snapshot(self) -> AcquisitionSnapshot:
        """Acquisition snapshot from the current models, without advancing
        the hyperparameter chains. Read-only with respect to replay: the
        candidate pool comes from a stream keyed by the iteration index."""
        return make_snapshot(
            self.objective_model.members,
            self._models(),
            self._unit_bounds,
            self.objective_model.inputs,
            self._stream(_S_POOL, self.iteration),
            n_scan=self.search.pool_scan,
        )

    def recommend(self) -> Recommendation:
        """Best point per the probabilistic-constraint program, over the
        observed inputs plus a fresh low-discrepancy pool."""
        if self.objective_model.n_observations == 0 and not any(
            getattr(m, "n_observations", 0) for m in self._models()
        ):
            raise StateError("no observations ingested yet")
        pool = candidate_pool(
            self.objective_model.inputs,
            self._unit_bounds,
            self._stream(_S_RECOMMEND, self._n_evaluations),
            n_scan=self.search.recommend_scan,
        )
        members = self.objective_model.members
        means = ensemble_mean(members, pool)
        models = self._models()
        mask = np.ones(pool.shape[0], dtype=bool)
        probs = np.ones((len(models), pool.shape[0]))
        for i, model in enumerate(models):
            probs[i] = model.probability_batch(pool)
            mask &= probs[i] >= 1.0 - model.spec.delta
        if np.any(mask):
            masked = np.where(mask, means, np.inf)
            best = int(np.argmin(masked))
            feasible = True
        else:
            weight = probs.prod(axis=0) if len(models) else np.ones(pool.shape[0])
            best = int(np.argmax(weight))
            feasible = False
        return Recommendation(
            x=self._norm.to_problem(pool[best]),
            expected_objective=float(self.objective_model.from_model_space(means[best])),
            constraint_probabilities={
                model.spec.id: float(probs[i, best]) for i, model in enumerate(models)
            },
            feasible=feasible,
        )

    # ----- evaluator-driven execution ------------------------------------------------

    def _evaluate(self, task: str, x: np.ndarray) -> object:
        rng = self._stream(_S_EVAL, self._n_evaluations)
        if task in (INIT_TASK, COUPLED_TASK):
            payload: dict = {}
            payload["objective"] = self._call_objective(x, rng)
            for pc in self.problem.constraints:
                if pc.spec.id == self.problem.failure_constraint_id:
                    continue
                payload[pc.spec.id] = self._call_constraint(pc, x, rng)
            return payload
        if task == OBJECTIVE_TASK:
            return self._call_objective(x, rng)
        pc = next(c for c in self.problem.constraints if c.spec.id == task)
        return self._call_constraint(pc, x, rng)

    def _call_objective(self, x: np.ndarray, rng: np.random.Generator):
        if self.problem.objective is None:
            raise StateError("problem has no objective evaluator; drive it via ask/tell")
        try:
            return float(self.problem.objective(x, rng))
        except EvaluationFailure:
            if self.problem.failure_constraint_id is None:
                raise
            return None

    def _call_constraint(self, pc: ProblemConstraint, x: np.ndarray, rng: np.random.Generator):
        if pc.spec.kind == "boolean-oracle":
            return bool(pc.oracle(x))
        if pc.evaluator is None:
            raise StateError(
                f"constraint {pc.spec.id!r} has no evaluator; drive it via ask/tell"
            )
        return pc.evaluator(x, rng)

    def step(self) -> IterationRecord | None:
        """Run one full cycle through the problem's evaluators."""
        task, x = self.ask()
        try:
            payload = self._evaluate(task, x)
        except EvaluationFailure as exc:
            raise EvaluationFailure(f"iteration {self.iteration + 1}: {exc}") from exc
        return self.tell(task, x, payload)

    def initialize(self) -> None:
        """Evaluate the initial design (all tasks at each point)."""
        while not self.initialized:
            self.step()

    def run(self, iterations: int | None = None, cost_budget: float | None = None) -> RunTrace:
        """Initialize if needed and run until the iteration or cost budget
        is exhausted (iterations count post-initialization steps)."""
        if iterations is None and cost_budget is None:
            raise InputError("provide an iteration count or a cost budget")
        self.initialize()
        start_cost = self._spent_cost
        while True:
            if iterations is not None and self.iteration >= iterations:
                break
            if cost_budget is not None and self._spent_cost - start_cost >= cost_budget:
                break
            self.step()
        return self.trace

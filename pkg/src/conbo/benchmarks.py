"""Built-in constrained test problems with known ground truth.

These drive the CLI/service end to end and anchor the test suite:

* ``branin-disk``: the 2D Branin-Hoo function with a disk constraint that
  keeps only one of the three global minima feasible. The constraint is
  observed as noise-free booleans and modeled through the probit latent GP;
  ``branin-disk-oracle`` declares the same disk as a known boolean oracle.
* ``binomial-1d``: a shifted quadratic whose constraint is a smooth success
  probability observed through binomial counts; the feasible set is known
  in closed form.
* ``runtime-1d``: a quadratic constrained by a synthetic running time with
  a log-scale budget transform and Gaussian observation noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .constraints import ConstraintSpec, LatentTransform
from .errors import InputError
from .optimizer import Problem, ProblemConstraint

BRANIN_BOUNDS = np.array([[-5.0, 10.0], [0.0, 15.0]])
BRANIN_MINIMA = np.array(
    [[math.pi, 2.275], [-math.pi, 12.275], [9.42478, 2.475]]
)
BRANIN_MIN_VALUE = 0.39788735772973816
DISK_CENTER = np.array([2.5, 7.5])
DISK_RADIUS_SQ = 50.0


def branin_hoo(x) -> float:
    """Standard Branin-Hoo value on [-5, 10] x [0, 15]."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (2,):
        raise InputError("branin_hoo takes 2D points")
    if not (
        BRANIN_BOUNDS[0, 0] <= x[0] <= BRANIN_BOUNDS[0, 1]
        and BRANIN_BOUNDS[1, 0] <= x[1] <= BRANIN_BOUNDS[1, 1]
    ):
        raise InputError(f"point {x} is outside the Branin-Hoo box")
    x1, x2 = x
    a = 1.0
    b = 5.1 / (4.0 * math.pi**2)
    c = 5.0 / math.pi
    r = 6.0
    s = 10.0
    t = 1.0 / (8.0 * math.pi)
    return float(a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1 - t) * math.cos(x1) + s)


def disk_constraint(x) -> bool:
    """True iff (x1 - 2.5)^2 + (x2 - 7.5)^2 <= 50."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (2,):
        raise InputError("disk_constraint takes 2D points")
    return bool(np.sum((x - DISK_CENTER) ** 2) <= DISK_RADIUS_SQ)


@dataclass
class BenchmarkProblem:
    """A named problem plus whatever ground truth is known about it."""

    name: str
    problem: Problem
    true_optimum: tuple[np.ndarray, float] | None = None
    noise_std: dict[str, float] = field(default_factory=dict)
    extras: dict = field(default_factory=dict)


def branin_disk_problem(
    mode: str = "decoupled",
    delta: float = 0.01,
    constraint_cost: float = 1.0,
    objective_cost: float = 1.0,
    oracle_constraint: bool = False,
) -> BenchmarkProblem:
    """Branin-Hoo with the decoupled disk constraint.

    The disk is observed as noise-free booleans; by default it is modeled
    with a bernoulli/probit latent GP, `oracle_constraint=True` declares it
    as a known boolean oracle instead.
    """
    if oracle_constraint:
        constraint = ProblemConstraint(
            spec=ConstraintSpec(
                id="disk", kind="boolean-oracle", delta=delta, cost=constraint_cost
            ),
            oracle=disk_constraint,
        )
    else:
        constraint = ProblemConstraint(
            spec=ConstraintSpec(id="disk", kind="binomial", delta=delta, cost=constraint_cost),
            evaluator=lambda x, rng: (1 if disk_constraint(x) else 0, 1),
            fantasy_trials=1,
        )
    problem = Problem(
        bounds=BRANIN_BOUNDS.copy(),
        objective=lambda x, rng: branin_hoo(x),
        constraints=[constraint],
        mode=mode,
        objective_cost=objective_cost,
    )
    name = "branin-disk-oracle" if oracle_constraint else "branin-disk"
    return BenchmarkProblem(
        name=name,
        problem=problem,
        true_optimum=(BRANIN_MINIMA[0].copy(), BRANIN_MIN_VALUE),
        noise_std={"objective": 0.0, "disk": 0.0},
        extras={"feasible_minima": [0]},
    )


def synthetic_binomial_problem(
    trials: int = 10,
    epsilon: float = 0.05,
    slope: float = 3.5,
    intercept: float = 3.0,
    always_succeed: bool = False,
    mode: str = "decoupled",
    delta: float = 0.05,
    constraint_cost: float = 1.0,
    objective_cost: float = 1.0,
) -> BenchmarkProblem:
    """1D quadratic objective with the constraint rho(x) >= 1 - epsilon.

    The success probability is rho(x) = Phi(intercept - slope * x) on
    [0, 1] (or identically one with `always_succeed`), observed through
    binomial counts with the given number of trials. The feasible set is
    [0, (intercept - ndtri(1 - epsilon)) / slope] in closed form.
    """
    if trials < 1:
        raise InputError("binomial benchmark needs at least one trial")
    if not 0.0 < epsilon < 1.0:
        raise InputError("epsilon must lie strictly between 0 and 1")

    minimum = 0.85

    def objective(x, rng):
        return float((np.asarray(x).ravel()[0] - minimum) ** 2)

    if always_succeed:
        rho = lambda x: 1.0
        feasible_upper = 1.0
        opt_x, opt_val = np.array([minimum]), 0.0
    else:
        rho = lambda x: float(ndtr(intercept - slope * np.asarray(x).ravel()[0]))
        feasible_upper = float((intercept - ndtri(1.0 - epsilon)) / slope)
        if feasible_upper >= minimum:
            opt_x, opt_val = np.array([minimum]), 0.0
        else:
            opt_x, opt_val = np.array([feasible_upper]), (feasible_upper - minimum) ** 2

    def constraint_eval(x, rng):
        p = rho(x)
        return (int(rng.binomial(trials, p)), trials)

    problem = Problem(
        bounds=np.array([[0.0, 1.0]]),
        objective=objective,
        constraints=[
            ProblemConstraint(
                spec=ConstraintSpec(
                    id="taste",
                    kind="binomial",
                    delta=delta,
                    cost=constraint_cost,
                    success_threshold=1.0 - epsilon,
                ),
                evaluator=constraint_eval,
                fantasy_trials=trials,
            )
        ],
        mode=mode,
        objective_cost=objective_cost,
    )
    return BenchmarkProblem(
        name="binomial-1d",
        problem=problem,
        true_optimum=(opt_x, float(opt_val)),
        noise_std={"objective": 0.0},
        extras={"rho": rho, "feasible_upper": feasible_upper, "epsilon": epsilon},
    )


def synthetic_runtime_problem(
    noise_std: float = 0.05,
    mode: str = "decoupled",
    delta: float = 0.05,
    constraint_cost: float = 1.0,
    objective_cost: float = 1.0,
) -> BenchmarkProblem:
    """1D quadratic constrained by a synthetic running time tau(x) with a
    budget tau_max, observed in log scale with Gaussian noise.

    tau(x) = exp(2.5 (x - 0.35)) and tau_max = 1, so the true feasible set
    is x <= 0.35 while the unconstrained minimum sits at 0.9.
    """
    minimum = 0.9
    boundary = 0.35
    tau_max = 1.0

    def objective(x, rng):
        return float((np.asarray(x).ravel()[0] - minimum) ** 2)

    def runtime(x, rng):
        log_tau = 2.5 * (np.asarray(x).ravel()[0] - boundary)
        if noise_std > 0:
            log_tau += noise_std * rng.standard_normal()
        return float(np.exp(log_tau))

    problem = Problem(
        bounds=np.array([[0.0, 1.0]]),
        objective=objective,
        constraints=[
            ProblemConstraint(
                spec=ConstraintSpec(
                    id="runtime",
                    kind="gaussian-latent",
                    delta=delta,
                    cost=constraint_cost,
                    transform=LatentTransform(kind="log-time", value=tau_max),
                ),
                evaluator=runtime,
            )
        ],
        mode=mode,
        objective_cost=objective_cost,
    )
    return BenchmarkProblem(
        name="runtime-1d",
        problem=problem,
        true_optimum=(np.array([boundary]), (boundary - minimum) ** 2),
        noise_std={"objective": 0.0, "runtime": noise_std},
        extras={"feasible_upper": boundary, "tau_max": tau_max},
    )


_REGISTRY = {
    "branin-disk": branin_disk_problem,
    "branin-disk-oracle": lambda **kw: branin_disk_problem(oracle_constraint=True, **kw),
    "binomial-1d": synthetic_binomial_problem,
    "runtime-1d": synthetic_runtime_problem,
}


def problem_names() -> list[str]:
    return sorted(_REGISTRY)


def get_problem(name: str, **overrides) -> BenchmarkProblem:
    """Instantiate a benchmark by name; unknown names raise InputError."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise InputError(
            f"unknown benchmark {name!r}; available: {', '.join(problem_names())}"
        ) from None
    return factory(**overrides)

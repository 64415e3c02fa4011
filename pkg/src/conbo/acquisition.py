"""Expected improvement, constraint weighting, and acquisition maximization.

The working acquisition is expected improvement against a target t, weighted
by the product of per-constraint satisfaction probabilities. The target is
the smallest ensemble-averaged predictive mean among candidate points that
satisfy every probabilistic constraint; when no such point exists the
objective is ignored and the constraint-probability product alone drives the
search until the feasible region is found.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import qmc

from .errors import InputError, StateError

#: Below this predictive std the EI closed form collapses to max(0, t - mean).
EI_SIGMA_FLOOR = 1e-12

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def expected_improvement(mean, variance, target):
    """Closed-form expected improvement for minimization.

    With z = (t - mean)/sigma this is sigma * (z * Phi(z) + phi(z));
    degenerate (near-zero sigma) marginals contribute max(0, t - mean).
    Accepts scalars or arrays and broadcasts elementwise.
    """
    mean_arr = np.asarray(mean, dtype=float)
    scalar = mean_arr.ndim == 0
    mean_arr = np.atleast_1d(mean_arr)
    var_arr = np.broadcast_to(np.asarray(variance, dtype=float), mean_arr.shape)
    if np.any(var_arr < 0):
        raise InputError("variance must be nonnegative")
    sigma = np.sqrt(var_arr)
    improvement = np.maximum(target - mean_arr, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > EI_SIGMA_FLOOR, (target - mean_arr) / sigma, 0.0)
    ei = np.where(
        sigma > EI_SIGMA_FLOOR,
        sigma * (z * ndtr(z) + _INV_SQRT_2PI * np.exp(-0.5 * z * z)),
        improvement,
    )
    ei = np.maximum(ei, 0.0)
    return float(ei[0]) if scalar else ei


@dataclass
class AcquisitionSnapshot:
    """Frozen ensemble view used to evaluate the acquisition consistently
    during one inner optimization: objective posteriors (one per
    hyperparameter sample), fitted constraint models, the EI target (None
    when the probabilistic constraints hold nowhere yet), the search box,
    and the candidate pool the target was computed over."""

    objective_members: list
    constraint_models: list
    bounds: np.ndarray
    target: float | None
    pool: np.ndarray | None = None

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float)
        if self.bounds.ndim != 2 or self.bounds.shape[1] != 2:
            raise InputError("bounds must be a (D, 2) array")
        if not np.all(self.bounds[:, 0] < self.bounds[:, 1]):
            raise InputError("each lower bound must be strictly below its upper bound")

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]


@dataclass(frozen=True)
class Candidate:
    """Result of one acquisition maximization."""

    x: np.ndarray
    acq_value: float
    feasibility_mode: bool

    def __post_init__(self):
        if self.acq_value < 0:
            raise InputError("acquisition values are nonnegative")


def sobol_scan(bounds: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Low-discrepancy scan of the search box (scrambled Sobol points)."""
    bounds = np.asarray(bounds, dtype=float)
    sampler = qmc.Sobol(d=bounds.shape[0], scramble=True, seed=rng)
    pts = sampler.random(n)
    return qmc.scale(pts, bounds[:, 0], bounds[:, 1])


def ensemble_mean(objective_members: list, X: np.ndarray) -> np.ndarray:
    """Predictive mean averaged over the hyperparameter ensemble."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    total = np.zeros(X.shape[0])
    for member in objective_members:
        mean, _ = member.predict_batch(X)
        total += mean
    return total / len(objective_members)


def ensemble_ei(objective_members: list, X: np.ndarray, target: float) -> np.ndarray:
    """Expected improvement averaged over the hyperparameter ensemble."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    total = np.zeros(X.shape[0])
    for member in objective_members:
        mean, var = member.predict_batch(X)
        total += expected_improvement(mean, var, target)
    return total / len(objective_members)


def constraint_weight(constraint_models: list, X: np.ndarray) -> np.ndarray:
    """Product over constraints of Pr(g_k(x) >= 0)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    weight = np.ones(X.shape[0])
    for model in constraint_models:
        weight *= model.probability_batch(X)
    return weight


def feasibility_acquisition(constraint_models: list, x) -> float:
    """Constraint-probability product alone, used while the probabilistic
    constraints hold nowhere (or when there is no objective at all)."""
    return float(constraint_weight(constraint_models, np.atleast_2d(np.asarray(x, dtype=float)))[0])


def compute_target(
    objective_members: list, constraint_models: list, pool: np.ndarray
) -> float | None:
    """Minimum ensemble-averaged predictive mean over pool points that
    satisfy every probabilistic constraint; None when no pool point does."""
    pool = np.atleast_2d(np.asarray(pool, dtype=float))
    if pool.shape[0] == 0:
        raise InputError("candidate pool must be non-empty")
    mask = np.ones(pool.shape[0], dtype=bool)
    for model in constraint_models:
        mask &= model.probability_batch(pool) >= 1.0 - model.spec.delta
    if not np.any(mask):
        return None
    return float(np.min(ensemble_mean(objective_members, pool)[mask]))


def candidate_pool(
    observed_inputs: np.ndarray | None,
    bounds: np.ndarray,
    rng: np.random.Generator,
    n_scan: int = 2048,
) -> np.ndarray:
    """Observed inputs plus a low-discrepancy scan of the box."""
    scan = sobol_scan(bounds, n_scan, rng)
    if observed_inputs is None or len(observed_inputs) == 0:
        return scan
    return np.vstack([np.atleast_2d(np.asarray(observed_inputs, dtype=float)), scan])


def make_snapshot(
    objective_members: list,
    constraint_models: list,
    bounds: np.ndarray,
    observed_inputs: np.ndarray | None,
    rng: np.random.Generator,
    n_scan: int = 2048,
) -> AcquisitionSnapshot:
    pool = candidate_pool(observed_inputs, bounds, rng, n_scan=n_scan)
    target = compute_target(objective_members, constraint_models, pool)
    return AcquisitionSnapshot(
        objective_members=objective_members,
        constraint_models=constraint_models,
        bounds=np.asarray(bounds, dtype=float),
        target=target,
        pool=pool,
    )


def constrained_ei(snapshot: AcquisitionSnapshot, x) -> float:
    """Constraint-weighted expected improvement at a single point. Raises a
    StateError when the target is absent."""
    return float(_improvement_values(snapshot, np.atleast_2d(np.asarray(x, dtype=float)))[0])


def acquisition_values(snapshot: AcquisitionSnapshot, X: np.ndarray) -> np.ndarray:
    """Vectorized acquisition: EI times the constraint-probability product
    when the target exists, the constraint product alone otherwise."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    weight = constraint_weight(snapshot.constraint_models, X)
    if snapshot.target is None:
        return weight
    return ensemble_ei(snapshot.objective_members, X, snapshot.target) * weight


def _improvement_values(snapshot: AcquisitionSnapshot, X: np.ndarray) -> np.ndarray:
    if snapshot.target is None:
        raise StateError(
            "EI target is absent (no point satisfies the probabilistic constraints); "
            "use feasibility_acquisition instead"
        )
    return acquisition_values(snapshot, X)


def maximize_acquisition(
    snapshot: AcquisitionSnapshot,
    rng: np.random.Generator,
    n_scan: int = 1024,
    n_top: int = 10,
    refine_steps: int = 100,
) -> Candidate:
    """Maximize the acquisition over the search box.

    A scrambled-Sobol scan seeds coordinate pattern refinement from the
    highest-scoring points; steps that do not improve shrink geometrically.
    Deterministic given the generator state, and never leaves the box.
    """
    bounds = snapshot.bounds
    dim = snapshot.dim
    span = bounds[:, 1] - bounds[:, 0]

    scan = sobol_scan(bounds, n_scan, rng)
    values = acquisition_values(snapshot, scan)
    order = np.argsort(-values, kind="stable")[:n_top]
    xs = scan[order].copy()
    fs = values[order].copy()

    steps = np.tile(0.1 * span, (xs.shape[0], 1))
    for _ in range(refine_steps):
        if np.all(steps < 1e-9 * span):
            break
        moves = []
        for i in range(xs.shape[0]):
            for d in range(dim):
                for sign in (1.0, -1.0):
                    trial = xs[i].copy()
                    trial[d] = np.clip(trial[d] + sign * steps[i, d], bounds[d, 0], bounds[d, 1])
                    moves.append(trial)
        moves = np.asarray(moves)
        move_vals = acquisition_values(snapshot, moves).reshape(xs.shape[0], 2 * dim)
        for i in range(xs.shape[0]):
            best = int(np.argmax(move_vals[i]))
            if move_vals[i, best] > fs[i]:
                d, sign = best // 2, (1.0 if best % 2 == 0 else -1.0)
                xs[i, d] = np.clip(xs[i, d] + sign * steps[i, d], bounds[d, 0], bounds[d, 1])
                fs[i] = move_vals[i, best]
            else:
                steps[i] *= 0.5

    winner = int(np.argmax(fs))
    return Candidate(
        x=xs[winner],
        acq_value=float(max(fs[winner], 0.0)),
        feasibility_mode=snapshot.target is None,
    )

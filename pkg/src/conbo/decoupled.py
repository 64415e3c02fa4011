"""Task selection for decoupled objective/constraint evaluation.

When the objective and the constraints can be evaluated independently, each
iteration first picks an input with the coupled constraint-weighted
acquisition and then decides which task to run there. The decision criterion
is entropy search over p_min, the distribution of the constrained
minimizer's location: for every task we fantasize observation outcomes at
the chosen input, condition the task's model on them, re-estimate p_min on a
discretization, and pick the task whose fantasized observation most reduces
the entropy of p_min per unit evaluation cost.

p_min itself is estimated by Monte Carlo: joint posterior samples of the
objective and of every constraint's latent function are drawn over the
discretization, and each joint draw votes for the feasible point with the
lowest objective sample (or for an explicit "nowhere feasible" atom).

Fantasy conditioning reuses the current hyperparameter samples and reduces
to rank-one Gaussian updates of each member's joint predictive, so the
per-iteration cost stays small. The same standard-normal draws are reused
between the current and conditioned posteriors of a member, which reduces
the variance of the estimated entropy change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .acquisition import AcquisitionSnapshot, acquisition_values, maximize_acquisition, sobol_scan
from .constraints import BinomialConstraint, BooleanOracleConstraint, GaussianLatentConstraint
from .errors import InputError
from .gp import chol_with_jitter

#: Grid size for the one-dimensional latent draw behind a probit fantasy.
_PROBIT_GRID = 96


@dataclass
class PminEstimate:
    """Monte Carlo estimate of the constrained-minimizer distribution on a
    discretization, with an explicit atom for joint draws under which no
    point is feasible."""

    points: np.ndarray
    mass: np.ndarray
    infeasible_mass: float

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape[0] != self.points.shape[0]:
            raise InputError("one mass entry per discretization point is required")
        if np.any(self.mass < 0) or self.infeasible_mass < 0:
            raise InputError("probability mass entries must be nonnegative")
        if abs(self.mass.sum() + self.infeasible_mass - 1.0) > 1e-9:
            raise InputError("mass plus infeasible mass must sum to one")


@dataclass(frozen=True)
class TaskDecision:
    """Outcome of one task-selection step."""

    task: str
    x: np.ndarray
    expected_entropy_reduction_per_cost: float


def entropy(p: PminEstimate) -> float:
    """Discrete entropy of p_min, counting the infeasible event as one extra
    atom."""
    return _entropy_of(p.mass, p.infeasible_mass)


def build_discretization(
    snapshot: AcquisitionSnapshot,
    n_points: int,
    rng: np.random.Generator,
    n_scan: int = 4096,
) -> np.ndarray:
    """Top n_points of a low-discrepancy scan, scored by the current
    acquisition (constraint-weighted EI, or the feasibility product while
    the target is absent)."""
    if n_points < 2:
        raise InputError("the discretization needs at least two points")
    scan = sobol_scan(snapshot.bounds, n_scan, rng)
    values = acquisition_values(snapshot, scan)
    order = np.argsort(-values, kind="stable")[:n_points]
    return scan[order]


def _allocate(total: int, buckets: int) -> list[int]:
    base, extra = divmod(total, buckets)
    return [base + (1 if i < extra else 0) for i in range(buckets)]


class _ModelSampler:
    """Joint-predictive geometry of one model (objective or latent
    constraint) over the discretization, plus the rank-one quantities needed
    to condition each ensemble member on a fantasy outcome at x."""

    def __init__(self, members: list, points: np.ndarray, x: np.ndarray | None = None):
        self.members = members
        self.n_points = points.shape[0]
        self.mus = []
        self.chols = []
        self.mu_x = []
        self.var_x = []
        self.cross = []
        stacked = points if x is None else np.vstack([points, x[None, :]])
        for member in members:
            mu, cov = member.predict_joint(stacked)
            scale = member.hyper.amplitude**2
            if x is None:
                L, _ = chol_with_jitter(cov, scale)
                self.mus.append(mu)
                self.chols.append(L)
            else:
                n = self.n_points
                L, _ = chol_with_jitter(cov[:n, :n], scale)
                self.mus.append(mu[:n])
                self.chols.append(L)
                self.mu_x.append(float(mu[n]))
                self.var_x.append(max(float(cov[n, n]), 0.0))
                self.cross.append(cov[:n, n])

    def draw_normals(self, counts: list[int], rng: np.random.Generator) -> list[np.ndarray]:
        return [rng.standard_normal((self.n_points, c)) for c in counts]

    def base_samples(self, normals: list[np.ndarray]) -> np.ndarray:
        blocks = [
            (self.mus[m][:, None] + self.chols[m] @ z).T for m, z in enumerate(normals)
        ]
        return np.vstack(blocks)

    def conditioned_blocks(
        self, normals: list[np.ndarray], cond_vars: list[float]
    ) -> tuple[list[np.ndarray], list[np.ndarray], list[float]]:
        """Zero-mean conditioned sample blocks plus the per-member gain
        vector and denominator for fantasy mean shifts."""
        blocks, gains, denoms = [], [], []
        for m, z in enumerate(normals):
            scale = self.members[m].hyper.amplitude**2
            s = max(self.var_x[m] + cond_vars[m], 1e-12 * scale)
            v = self.cross[m]
            sigma = self.chols[m] @ self.chols[m].T - np.outer(v, v) / s
            L, _ = chol_with_jitter(sigma, scale)
            blocks.append((L @ z).T)
            gains.append(v / s)
            denoms.append(s)
        return blocks, gains, denoms


class GaussianTaskView:
    """Fantasy machinery for tasks observed with Gaussian noise (the
    objective, and gaussian-latent constraints)."""

    def __init__(self, members: list):
        self.members = members

    def noise_var(self, m: int) -> float:
        return float(self.members[m].hyper.noise_std ** 2)

    def draw_outcomes(self, m, mu_x, var_x, count, rng) -> np.ndarray:
        return mu_x + math.sqrt(max(var_x + self.noise_var(m), 0.0)) * rng.standard_normal(count)

    def conditioning_values(self, m, mu_x, var_x, outcomes, rng) -> tuple[np.ndarray, float]:
        # A real-valued observation conditions every member on the value itself.
        return np.asarray(outcomes, dtype=float), self.noise_var(m)


class ProbitTaskView:
    """Fantasy machinery for binomial tasks: outcomes are counts, and
    conditioning a member means drawing a latent value at x from its
    one-dimensional posterior given those counts (inverse-CDF on a grid)."""

    def __init__(self, members: list, probit_offset: float, trials: int):
        if trials < 1:
            raise InputError("fantasy trials must be >= 1")
        self.members = members
        self.offset = probit_offset
        self.trials = trials

    def noise_var(self, m: int) -> float:
        return 0.0

    def draw_outcomes(self, m, mu_x, var_x, count, rng) -> np.ndarray:
        g = mu_x + math.sqrt(max(var_x, 0.0)) * rng.standard_normal(count)
        p = ndtr(g + self.offset)
        return rng.binomial(self.trials, p).astype(float)

    def conditioning_values(self, m, mu_x, var_x, outcomes, rng) -> tuple[np.ndarray, float]:
        successes = np.asarray(outcomes, dtype=float)
        sigma = math.sqrt(max(var_x, 1e-18))
        grid = mu_x + sigma * np.linspace(-6.0, 6.0, _PROBIT_GRID)
        z = grid + self.offset
        log_post = (
            -0.5 * ((grid - mu_x) / sigma) ** 2
            + successes[:, None] * log_ndtr(z)[None, :]
            + (self.trials - successes)[:, None] * log_ndtr(-z)[None, :]
        )
        log_post -= log_post.max(axis=1, keepdims=True)
        weights = np.exp(log_post)
        cdf = np.cumsum(weights, axis=1)
        cdf /= cdf[:, -1:]
        u = rng.uniform(size=successes.shape[0])
        idx = (cdf < u[:, None]).sum(axis=1)
        return grid[np.minimum(idx, _PROBIT_GRID - 1)], 0.0


def _task_view(model):
    if isinstance(model, BinomialConstraint):
        trials = model.fantasy_trials
        if trials is None:
            trials = int(np.median(model._trials)) if model._trials else 1
        return ProbitTaskView(model.members, model.probit_offset, trials)
    if isinstance(model, GaussianLatentConstraint):
        return GaussianTaskView(model.members)
    raise InputError(f"constraint model {model!r} cannot be fantasized")


def _pmin_mass(obj_samples: np.ndarray, feasible: np.ndarray) -> tuple[np.ndarray, float]:
    total, n_points = obj_samples.shape
    masked = np.where(feasible, obj_samples, np.inf)
    any_feasible = feasible.any(axis=1)
    idx = np.argmin(masked, axis=1)
    counts = np.bincount(idx[any_feasible], minlength=n_points)
    return counts / total, float((~any_feasible).sum()) / total


def _oracle_mask(constraint_models: list, points: np.ndarray) -> np.ndarray:
    mask = np.ones(points.shape[0], dtype=bool)
    for model in constraint_models:
        if model.is_oracle:
            mask &= model.feasible_mask(points)
    return mask


def estimate_pmin(
    snapshot: AcquisitionSnapshot,
    points: np.ndarray,
    n_samples: int,
    rng: np.random.Generator,
) -> PminEstimate:
    """Monte Carlo p_min on the given discretization.

    Every joint draw combines one posterior sample of the objective over the
    points (members get near-equal shares of the draws) with one joint
    latent sample per modeled constraint; oracle constraints contribute a
    fixed feasibility mask.
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    obj_sampler = _ModelSampler(snapshot.objective_members, points)
    obj = obj_sampler.base_samples(
        obj_sampler.draw_normals(_allocate(n_samples, len(snapshot.objective_members)), rng)
    )
    feasible = np.tile(_oracle_mask(snapshot.constraint_models, points), (n_samples, 1))
    for model in snapshot.constraint_models:
        if model.is_oracle:
            continue
        sampler = _ModelSampler(model.members, points)
        latents = sampler.base_samples(
            sampler.draw_normals(_allocate(n_samples, len(model.members)), rng)
        )
        feasible &= latents >= 0.0
    mass, infeasible = _pmin_mass(obj, feasible)
    return PminEstimate(points=points, mass=mass, infeasible_mass=infeasible)


def select_task(
    snapshot: AcquisitionSnapshot,
    x: np.ndarray,
    tasks: list[tuple[str, float]],
    fantasies_per_member: int,
    n_samples: int,
    rng: np.random.Generator,
    points: np.ndarray | None = None,
    n_discretization: int = 50,
) -> TaskDecision:
    """Pick the task whose fantasized observation at x most reduces the
    expected entropy of p_min per unit cost.

    `tasks` lists (task id, cost) pairs, task id being "objective" or a
    constraint id. Ties are broken toward the lower cost, then task order.
    """
    if fantasies_per_member < 1:
        raise InputError("at least one fantasy per ensemble member is required")
    if not tasks:
        raise InputError("at least one task must be declared")
    x = np.asarray(x, dtype=float).ravel()
    bounds = snapshot.bounds
    if np.any(x < bounds[:, 0] - 1e-12) or np.any(x > bounds[:, 1] + 1e-12):
        raise InputError("candidate input lies outside the search box")
    if len(tasks) == 1:
        return TaskDecision(task=tasks[0][0], x=x, expected_entropy_reduction_per_cost=0.0)

    pts_rng, base_rng, fantasy_rng = rng.spawn(3)
    if points is None:
        points = build_discretization(snapshot, n_discretization, pts_rng)
    points = np.atleast_2d(np.asarray(points, dtype=float))

    by_id = {m.spec.id: m for m in snapshot.constraint_models}
    modeled_ids = [m.spec.id for m in snapshot.constraint_models if not m.is_oracle]
    for task_id, cost in tasks:
        if cost <= 0:
            raise InputError("task costs must be positive")
        if task_id != "objective":
            if task_id not in by_id:
                raise InputError(f"unknown task {task_id!r}")
            if by_id[task_id].is_oracle:
                raise InputError("boolean-oracle constraints are not fantasizable tasks")

    # Joint-predictive geometry and current-posterior base samples, one
    # model at a time in a fixed order so the draw is reproducible.
    samplers: dict[str, _ModelSampler] = {}
    views: dict[str, object] = {}
    normals: dict[str, list[np.ndarray]] = {}
    base: dict[str, np.ndarray] = {}
    samplers["objective"] = _ModelSampler(snapshot.objective_members, points, x)
    views["objective"] = GaussianTaskView(snapshot.objective_members)
    for cid in modeled_ids:
        model = by_id[cid]
        samplers[cid] = _ModelSampler(model.members, points, x)
        views[cid] = _task_view(model)
    model_streams = base_rng.spawn(1 + len(modeled_ids))
    for tid, stream in zip(["objective", *modeled_ids], model_streams):
        sampler = samplers[tid]
        counts = _allocate(n_samples, len(sampler.members))
        normals[tid] = sampler.draw_normals(counts, stream)
        base[tid] = sampler.base_samples(normals[tid])

    oracle = _oracle_mask(snapshot.constraint_models, points)

    def feasibility(replace: str | None = None, replacement: np.ndarray | None = None):
        mask = np.tile(oracle, (n_samples, 1))
        for cid in modeled_ids:
            latents = replacement if cid == replace else base[cid]
            mask &= latents >= 0.0
        return mask

    base_feasible = feasibility()
    current_mass, current_inf = _pmin_mass(base["objective"], base_feasible)
    current_entropy = _entropy_of(current_mass, current_inf)

    task_streams = fantasy_rng.spawn(len(tasks))
    scores: list[tuple[float, float, int]] = []
    reductions: list[float] = []
    for index, ((task_id, cost), stream) in enumerate(zip(tasks, task_streams)):
        sampler = samplers[task_id]
        view = views[task_id]
        members = sampler.members
        outcome_rng, cond_rng = stream.spawn(2)

        outcomes = np.concatenate(
            [
                view.draw_outcomes(
                    m, sampler.mu_x[m], sampler.var_x[m], fantasies_per_member, outcome_rng
                )
                for m in range(len(members))
            ]
        )
        cond_value_rows = []
        cond_vars = []
        for m in range(len(members)):
            values, cvar = view.conditioning_values(
                m, sampler.mu_x[m], sampler.var_x[m], outcomes, cond_rng
            )
            cond_value_rows.append(values)
            cond_vars.append(cvar)
        # Reusing the base normal draws couples the conditioned and current
        # sample sets, shrinking the variance of the entropy difference.
        blocks, gains, _ = sampler.conditioned_blocks(normals[task_id], cond_vars)

        total_entropy = 0.0
        for j in range(outcomes.shape[0]):
            sample_blocks = [
                blocks[m]
                + (
                    sampler.mus[m]
                    + gains[m] * (cond_value_rows[m][j] - sampler.mu_x[m])
                )[None, :]
                for m in range(len(members))
            ]
            conditioned = np.vstack(sample_blocks)
            if task_id == "objective":
                mass, inf = _pmin_mass(conditioned, base_feasible)
            else:
                mass, inf = _pmin_mass(
                    base["objective"], feasibility(replace=task_id, replacement=conditioned)
                )
            total_entropy += _entropy_of(mass, inf)
        expected = total_entropy / outcomes.shape[0]
        scores.append(((expected - current_entropy) / cost, cost, index))
        reductions.append((current_entropy - expected) / cost)

    best = min(range(len(tasks)), key=lambda i: scores[i])
    return TaskDecision(
        task=tasks[best][0], x=x, expected_entropy_reduction_per_cost=reductions[best]
    )


def _entropy_of(mass: np.ndarray, infeasible: float) -> float:
    positive = mass[mass > 0]
    h = -float(np.sum(positive * np.log(positive)))
    if infeasible > 0:
        h -= infeasible * math.log(infeasible)
    return max(h, 0.0)


def decoupled_step(
    snapshot: AcquisitionSnapshot,
    tasks: list[tuple[str, float]],
    rng: np.random.Generator,
    fantasies_per_member: int = 10,
    n_samples: int = 1000,
    n_discretization: int = 50,
) -> tuple[str, np.ndarray]:
    """One decoupled decision: pick x with the coupled acquisition, then the
    task to evaluate there by entropy search. Returns (task id, x)."""
    acq_rng, task_rng = rng.spawn(2)
    candidate = maximize_acquisition(snapshot, acq_rng)
    decision = select_task(
        snapshot,
        candidate.x,
        tasks,
        fantasies_per_member,
        n_samples,
        task_rng,
        n_discretization=n_discretization,
    )
    return decision.task, candidate.x

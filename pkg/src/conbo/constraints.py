"""Constraint conditions and the latent-function models behind them.

Each constraint k is a boolean condition on inputs, represented through a
real-valued latent function g_k with the convention that the condition holds
exactly when g_k(x) >= 0. Three kinds are supported:

* ``gaussian-latent``: real-valued observations of g (possibly through a
  transform such as log-runtime against a budget), Gaussian noise, exact GP
  posterior, hyperparameters integrated out by slice sampling.
* ``binomial``: success counts linked to g through a probit; the latent
  values are sampled with elliptical slice sampling and the kernel
  hyperparameters with whitened slice moves.
* ``boolean-oracle``: a known, noise-free validity predicate queried
  directly, so its satisfaction probability is always exactly 0 or 1.

Satisfaction probabilities Pr(g_k(x) >= 0) are Gaussian CDF evaluations of
the predictive marginals, averaged over the hyperparameter ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .errors import InputError, StateError
from .gp import (
    GPPosterior,
    KernelHyperparameters,
    PriorGP,
    chol_with_jitter,
    fit_gp,
    log_marginal_likelihood,
    matern52_matrix,
)
from .samplers import (
    HyperEnsemble,
    HyperPrior,
    elliptical_slice_sample,
    slice_sample_hypers,
    spawn_rngs,
    whitened_transition,
)

CONSTRAINT_KINDS = ("gaussian-latent", "binomial", "boolean-oracle")

#: Predictive std floor used when converting marginals to probabilities.
_STD_FLOOR = 1e-12


@dataclass(frozen=True)
class LatentTransform:
    """Observation-to-latent map for gaussian-latent constraints.

    ``log-time`` maps a positive measurement tau to log(value) - log(tau),
    so g >= 0 means tau <= value. ``upper-bound`` maps raw to value - raw
    and ``lower-bound`` to raw - value; ``identity`` passes raw through.
    """

    kind: str = "identity"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "log-time", "upper-bound", "lower-bound"):
            raise InputError(f"unknown transform kind {self.kind!r}")
        if self.kind == "log-time" and self.value <= 0:
            raise InputError("log-time transform requires a positive bound")


def latent_transform(raw: float, transform: LatentTransform | None) -> float:
    """Map a raw constraint observation to the latent g scale."""
    if transform is None or transform.kind == "identity":
        return float(raw)
    if transform.kind == "log-time":
        if raw <= 0:
            raise InputError("log-time transform requires a positive measurement")
        return float(np.log(transform.value) - np.log(raw))
    if transform.kind == "upper-bound":
        return float(transform.value - raw)
    return float(raw - transform.value)


@dataclass(frozen=True)
class ConstraintSpec:
    """Declaration of one constraint: its kind, confidence tolerance delta
    (the condition must hold with probability at least 1 - delta), and the
    relative cost of one evaluation."""

    id: str
    kind: str
    delta: float
    cost: float = 1.0
    transform: LatentTransform | None = None
    success_threshold: float | None = None

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise InputError(f"unknown constraint kind {self.kind!r}")
        if not 0.0 < self.delta < 1.0:
            raise InputError("delta must lie strictly between 0 and 1")
        if self.cost <= 0:
            raise InputError("cost must be positive")
        if self.transform is not None and self.kind != "gaussian-latent":
            raise InputError("transforms apply only to gaussian-latent constraints")
        if self.success_threshold is not None:
            if self.kind != "binomial":
                raise InputError("success_threshold applies only to binomial constraints")
            if not 0.0 < self.success_threshold < 1.0:
                raise InputError("success_threshold must lie strictly between 0 and 1")


@dataclass(frozen=True)
class ConstraintObservation:
    """One recorded constraint evaluation; the payload type must match the
    constraint kind (real, (successes, trials), or boolean)."""

    x: np.ndarray
    payload: object

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).ravel())


def _validate_counts(payload) -> tuple[int, int]:
    try:
        successes, trials = payload
    except (TypeError, ValueError):
        raise InputError("binomial observations are (successes, trials) pairs") from None
    successes, trials = int(successes), int(trials)
    if trials < 1:
        raise InputError("binomial observations need at least one trial")
    if not 0 <= successes <= trials:
        raise InputError("successes must lie in [0, trials]")
    return successes, trials


def probability_from_marginal(mean: np.ndarray, variance: np.ndarray) -> np.ndarray:
    """Pr(g >= 0) for Gaussian marginals, with a tiny std floor so that
    near-interpolated points saturate to 0/1 instead of dividing by zero."""
    std = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    return ndtr(np.asarray(mean, dtype=float) / np.maximum(std, _STD_FLOOR))


class GaussianLatentConstraint:
    """Latent constraint function observed directly (through an optional
    transform) with Gaussian noise; exact GP conditioning per
    hyperparameter sample."""

    def __init__(
        self,
        spec: ConstraintSpec,
        dim: int,
        prior: HyperPrior | None = None,
        ensemble_size: int = 10,
        fixed_hypers: KernelHyperparameters | None = None,
    ):
        if spec.kind != "gaussian-latent":
            raise InputError("spec kind must be gaussian-latent")
        self.spec = spec
        self.dim = dim
        self.prior = prior if prior is not None else HyperPrior.default(dim, with_noise=True)
        self.fixed_hypers = fixed_hypers
        self._X: list[np.ndarray] = []
        self._g: list[float] = []
        if fixed_hypers is not None:
            self._chain = [fixed_hypers] * ensemble_size
        else:
            self._chain = [self.prior.unpack(self.prior.means())] * ensemble_size
        self._members: list[GPPosterior | PriorGP] | None = None

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def is_oracle(self) -> bool:
        return False

    @property
    def n_observations(self) -> int:
        return len(self._g)

    def add_observation(self, x, raw: float) -> float:
        g = latent_transform(float(raw), self.spec.transform)
        x = np.asarray(x, dtype=float).ravel()
        if x.shape != (self.dim,):
            raise InputError("observation dimension does not match the constraint model")
        self._X.append(x)
        self._g.append(g)
        self._members = None
        return g

    def _log_lik(self, hypers: KernelHyperparameters) -> float:
        if not self._g:
            return 0.0
        return log_marginal_likelihood(np.array(self._X), np.array(self._g), hypers)

    def refresh(self, burnin: int, rng: np.random.Generator) -> None:
        """Advance every hyperparameter chain by `burnin` sweeps and refit
        the per-sample posteriors."""
        if self.fixed_hypers is None:
            streams = spawn_rngs(rng, len(self._chain))
            self._chain = [
                slice_sample_hypers(self._log_lik, self.prior, h, burnin, r)
                for h, r in zip(self._chain, streams)
            ]
        self._fit_members()

    def _fit_members(self) -> None:
        if self._g:
            X, g = np.array(self._X), np.array(self._g)
            self._members = [fit_gp(X, g, h) for h in self._chain]
        else:
            self._members = [PriorGP(h) for h in self._chain]

    @property
    def members(self) -> list:
        if self._members is None:
            self._fit_members()
        return self._members

    @property
    def ensemble(self) -> HyperEnsemble:
        return HyperEnsemble(samples=list(self._chain), latent_values=None)

    def probability_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        total = np.zeros(X.shape[0])
        for member in self.members:
            mean, var = member.predict_batch(X)
            total += probability_from_marginal(mean, var)
        return total / len(self.members)

    def probability(self, x) -> float:
        return float(self.probability_batch(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def satisfied(self, x) -> bool:
        return self.probability(x) >= 1.0 - self.spec.delta

    def observation_noise_var(self, member_index: int) -> float:
        return float(self.members[member_index].hyper.noise_std ** 2)


class BinomialConstraint:
    """Binomial (or bernoulli) constraint observations linked to the latent
    function through a probit.

    When a success threshold rho >= 1 - epsilon is declared, the probit is
    offset by ndtri(threshold) so the condition stays `latent >= 0`. The
    sampled latent values at observed inputs act as noise-free
    pseudo-observations when predicting at new points.
    """

    def __init__(
        self,
        spec: ConstraintSpec,
        dim: int,
        prior: HyperPrior | None = None,
        ensemble_size: int = 10,
        fixed_hypers: KernelHyperparameters | None = None,
        fantasy_trials: int | None = None,
    ):
        if spec.kind != "binomial":
            raise InputError("spec kind must be binomial")
        self.spec = spec
        self.dim = dim
        self.prior = prior if prior is not None else HyperPrior.default(dim, with_noise=False)
        if self.prior.models_noise:
            raise InputError("binomial constraint priors must not model observation noise")
        self.fixed_hypers = fixed_hypers
        self.probit_offset = (
            float(ndtri(spec.success_threshold)) if spec.success_threshold is not None else 0.0
        )
        self.fantasy_trials = fantasy_trials
        self._X: list[np.ndarray] = []
        self._successes: list[int] = []
        self._trials: list[int] = []
        start = fixed_hypers if fixed_hypers is not None else self.prior.unpack(self.prior.means())
        self._chain: list[tuple[KernelHyperparameters, np.ndarray]] = [
            (start, np.zeros(0)) for _ in range(ensemble_size)
        ]
        self._members: list[GPPosterior | PriorGP] | None = None

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def is_oracle(self) -> bool:
        return False

    @property
    def n_observations(self) -> int:
        return len(self._successes)

    def add_observation(self, x, payload) -> None:
        successes, trials = _validate_counts(payload)
        x = np.asarray(x, dtype=float).ravel()
        if x.shape != (self.dim,):
            raise InputError("observation dimension does not match the constraint model")
        self._X.append(x)
        self._successes.append(successes)
        self._trials.append(trials)
        # New latent slot starts at zero; the next refresh mixes it in.
        self._chain = [(h, np.append(g, 0.0)) for h, g in self._chain]
        self._members = None

    def log_lik(self, latent: np.ndarray) -> float:
        s = np.asarray(self._successes, dtype=float)
        n = np.asarray(self._trials, dtype=float)
        z = latent + self.probit_offset
        return float(np.sum(s * log_ndtr(z) + (n - s) * log_ndtr(-z)))

    def refresh(self, burnin: int, rng: np.random.Generator) -> None:
        streams = spawn_rngs(rng, len(self._chain))
        X = np.array(self._X) if self._X else np.zeros((0, self.dim))
        new_chain = []
        for (hypers, latent), stream in zip(self._chain, streams):
            if self.fixed_hypers is not None and latent.shape[0]:
                K = matern52_matrix(X, X, hypers)
                L, _ = chol_with_jitter(K, hypers.amplitude**2)
                for _ in range(burnin):
                    latent = elliptical_slice_sample(latent, L, self.log_lik, stream)
            elif self.fixed_hypers is None:
                for _ in range(burnin):
                    hypers, latent = whitened_transition(
                        hypers, latent, X, self.log_lik, self.prior, stream
                    )
            new_chain.append((hypers, latent))
        self._chain = new_chain
        self._fit_members()

    def _fit_members(self) -> None:
        if self._X:
            X = np.array(self._X)
            self._members = [
                fit_gp(X, latent, hypers, mean=0.0) for hypers, latent in self._chain
            ]
        else:
            self._members = [PriorGP(h) for h, _ in self._chain]

    @property
    def members(self) -> list:
        if self._members is None:
            self._fit_members()
        return self._members

    @property
    def ensemble(self) -> HyperEnsemble:
        return HyperEnsemble(
            samples=[h for h, _ in self._chain],
            latent_values=[g.copy() for _, g in self._chain],
        )

    def probability_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        total = np.zeros(X.shape[0])
        for member in self.members:
            mean, var = member.predict_batch(X)
            total += probability_from_marginal(mean, var)
        return total / len(self.members)

    def probability(self, x) -> float:
        return float(self.probability_batch(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def satisfied(self, x) -> bool:
        return self.probability(x) >= 1.0 - self.spec.delta

    def observation_noise_var(self, member_index: int) -> float:
        # Latent pseudo-observations are noise free.
        return 0.0


class BooleanOracleConstraint:
    """Known, noise-free validity predicate evaluated directly instead of
    being modeled; its satisfaction probability is exactly zero or one."""

    def __init__(self, spec: ConstraintSpec, oracle: Callable[[np.ndarray], bool]):
        if spec.kind != "boolean-oracle":
            raise InputError("spec kind must be boolean-oracle")
        self.spec = spec
        self.oracle = oracle

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def is_oracle(self) -> bool:
        return True

    def refresh(self, burnin: int, rng: np.random.Generator) -> None:
        pass

    def feasible_mask(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([bool(self.oracle(row)) for row in X])

    def probability_batch(self, X) -> np.ndarray:
        return self.feasible_mask(X).astype(float)

    def probability(self, x) -> float:
        return 1.0 if self.oracle(np.asarray(x, dtype=float).ravel()) else 0.0

    def satisfied(self, x) -> bool:
        return self.probability(x) >= 1.0 - self.spec.delta


def constraint_satisfaction_probability(model, x) -> float:
    """Pr(C(x)): the ensemble-averaged probability that the constraint
    condition holds at x."""
    if not hasattr(model, "probability"):
        raise StateError("model is not fitted")
    return model.probability(x)


def probabilistic_constraint_satisfied(model, x) -> bool:
    """Whether Pr(C(x)) >= 1 - delta, with a non-strict comparison at the
    boundary."""
    return model.probability(x) >= 1.0 - model.spec.delta

"""Gaussian process regression primitives.

Everything downstream (constraint models, acquisition, entropy-based task
selection) consumes the small surface defined here: a Matern 5/2 kernel with
per-dimension length scales, exact conditioning under a Gaussian likelihood,
and predictive marginals / joints at query points. Posteriors are immutable
once fitted, so they can be read from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

from .errors import InputError, NumericalError

_SQRT5 = np.sqrt(5.0)

#: Initial jitter, relative to amplitude^2.
JITTER_START = 1e-8
#: Largest jitter (relative to amplitude^2) tried before giving up.
JITTER_CEILING = 1e-2


@dataclass(frozen=True)
class KernelHyperparameters:
    """Matern 5/2 settings: ARD length scales, signal amplitude, and the
    observation noise standard deviation (zero for noise-free models)."""

    length_scales: np.ndarray
    amplitude: float
    noise_std: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "noise_std", float(self.noise_std))
        if ls.ndim != 1 or not np.all(ls > 0):
            raise InputError("length scales must be a 1-d array of strictly positive reals")
        if not self.amplitude > 0:
            raise InputError("amplitude must be strictly positive")
        if self.noise_std < 0:
            raise InputError("noise_std must be nonnegative")

    @property
    def dim(self) -> int:
        return self.length_scales.shape[0]


@dataclass(frozen=True)
class PredictiveMarginal:
    """Univariate Gaussian belief about the function value at one point."""

    mean: float
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise InputError("variance must be nonnegative")


def _check_points(X: np.ndarray, dim: int) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != dim:
        raise InputError(f"points have dimension {X.shape[1]}, kernel expects {dim}")
    return X


def matern52(x, x2, hyper: KernelHyperparameters) -> float:
    """Matern 5/2 covariance between two points.

    With r the Euclidean norm of the length-scale-normalized difference,
    returns amplitude^2 * (1 + sqrt(5) r + 5/3 r^2) * exp(-sqrt(5) r).
    """
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != (hyper.dim,) or x2.shape != (hyper.dim,):
        raise InputError(
            f"point dimensions {x.shape[0]}, {x2.shape[0]} do not match kernel dimension {hyper.dim}"
        )
    r = float(np.linalg.norm((x - x2) / hyper.length_scales))
    return float(hyper.amplitude**2 * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-_SQRT5 * r))


def matern52_matrix(X, X2, hyper: KernelHyperparameters) -> np.ndarray:
    """Cross-covariance matrix between two point sets."""
    X = _check_points(X, hyper.dim)
    X2 = _check_points(X2, hyper.dim)
    r = cdist(X / hyper.length_scales, X2 / hyper.length_scales)
    return hyper.amplitude**2 * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r**2) * np.exp(-_SQRT5 * r)


def pairwise_sq_diffs(X: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape (n, n, D). Precomputing them
    makes repeated kernel evaluations at new length scales cheap, which is
    what hyperparameter MCMC does thousands of times per refresh."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return (X[:, None, :] - X[None, :, :]) ** 2


def kernel_from_sq_diffs(sq: np.ndarray, hyper: KernelHyperparameters) -> np.ndarray:
    """Matern 5/2 Gram matrix from precomputed squared differences."""
    r2 = sq @ (1.0 / hyper.length_scales**2)
    r = np.sqrt(r2)
    return hyper.amplitude**2 * (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)


def gaussian_loglik_factory(inputs, targets, mean: float | None = None):
    """Fast Gaussian-likelihood log marginal closure for MCMC.

    Equivalent to log_marginal_likelihood on fixed data; precomputes the
    centered targets and pairwise differences once.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] == 0:
        return lambda hyper: 0.0
    offset = float(np.mean(y)) if mean is None else float(mean)
    centered = y - offset
    sq = pairwise_sq_diffs(X)
    n = X.shape[0]
    diag = np.diag_indices(n)
    log_two_pi_term = 0.5 * n * np.log(2.0 * np.pi)

    def loglik(hyper: KernelHyperparameters) -> float:
        K = kernel_from_sq_diffs(sq, hyper)
        K[diag] += hyper.noise_std**2 + JITTER_START * hyper.amplitude**2
        try:
            L = cholesky(K, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            return -np.inf
        alpha = cho_solve((L, True), centered, check_finite=False)
        return float(-0.5 * centered @ alpha - np.sum(np.log(np.diag(L))) - log_two_pi_term)

    return loglik


def chol_with_jitter(A: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of A + jitter*I, escalating jitter x10 from
    JITTER_START*scale up to JITTER_CEILING*scale.

    Returns the factor and the jitter that succeeded. Raises NumericalError
    if the matrix stays indefinite at the ceiling.
    """
    jitter = JITTER_START * scale
    eye = np.eye(A.shape[0])
    while True:
        try:
            L = cholesky(A + jitter * eye, lower=True, check_finite=False)
            return L, jitter
        except np.linalg.LinAlgError:
            pass
        jitter *= 10.0
        if jitter > JITTER_CEILING * scale:
            raise NumericalError(
                f"Gram matrix of size {A.shape[0]} not positive definite even with "
                f"jitter {jitter / 10.0:.3g} (scale {scale:.3g})"
            )


@dataclass(frozen=True)
class GPPosterior:
    """Exact GP posterior under a Gaussian likelihood.

    Immutable after fit; `predict*` methods are pure and thread-safe. The
    kernel matrix factored here is K + (noise_std^2 + jitter) I, and `alpha`
    solves it against the centered targets.
    """

    inputs: np.ndarray
    targets: np.ndarray
    hyper: KernelHyperparameters
    chol: np.ndarray
    alpha: np.ndarray
    mean_offset: float
    jitter: float

    @property
    def dim(self) -> int:
        return self.hyper.dim

    def predict(self, x) -> PredictiveMarginal:
        """Predictive mean and variance at a single point."""
        means, variances = self.predict_batch(np.atleast_2d(np.asarray(x, dtype=float)))
        return PredictiveMarginal(mean=float(means[0]), variance=float(variances[0]))

    def predict_batch(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Predictive means and variances at many points, vectorized."""
        X = _check_points(X, self.dim)
        k_star = matern52_matrix(self.inputs, X, self.hyper)
        means = self.mean_offset + k_star.T @ self.alpha
        v = solve_triangular(self.chol, k_star, lower=True, check_finite=False)
        variances = self.hyper.amplitude**2 - np.einsum("ij,ij->j", v, v)
        return means, np.maximum(variances, 0.0)

    def predict_joint(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Joint predictive mean vector and covariance matrix over points."""
        X = _check_points(X, self.dim)
        k_star = matern52_matrix(self.inputs, X, self.hyper)
        means = self.mean_offset + k_star.T @ self.alpha
        v = solve_triangular(self.chol, k_star, lower=True, check_finite=False)
        cov = matern52_matrix(X, X, self.hyper) - v.T @ v
        return means, cov


@dataclass(frozen=True)
class PriorGP:
    """Prior-only stand-in with the same predictive surface as GPPosterior,
    used by models that have no observations yet."""

    hyper: KernelHyperparameters
    mean_offset: float = 0.0

    @property
    def dim(self) -> int:
        return self.hyper.dim

    def predict(self, x) -> PredictiveMarginal:
        return PredictiveMarginal(mean=self.mean_offset, variance=self.hyper.amplitude**2)

    def predict_batch(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = _check_points(X, self.dim)
        n = X.shape[0]
        return np.full(n, self.mean_offset), np.full(n, self.hyper.amplitude**2)

    def predict_joint(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = _check_points(X, self.dim)
        return np.full(X.shape[0], self.mean_offset), matern52_matrix(X, X, self.hyper)


def fit_gp(
    inputs,
    targets,
    hyper: KernelHyperparameters,
    jitter: float | None = None,
    mean: float | None = None,
) -> GPPosterior:
    """Condition a GP on observations.

    `mean` is the constant prior mean; when None it is set to the empirical
    mean of the targets (subtracted before solving, added back at
    prediction). `jitter` overrides the starting jitter, which otherwise is
    JITTER_START * amplitude^2 and escalates x10 on factorization failure.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] < 1:
        raise InputError("at least one observation is required")
    if X.shape[0] != y.shape[0]:
        raise InputError("number of inputs must equal number of targets")
    if not np.all(np.isfinite(y)):
        raise InputError("targets must be finite")
    if X.shape[1] != hyper.dim:
        raise InputError(f"inputs have dimension {X.shape[1]}, kernel expects {hyper.dim}")

    offset = float(np.mean(y)) if mean is None else float(mean)
    centered = y - offset
    K = matern52_matrix(X, X, hyper) + hyper.noise_std**2 * np.eye(X.shape[0])
    scale = hyper.amplitude**2
    if jitter is not None:
        try:
            L = cholesky(K + jitter * np.eye(X.shape[0]), lower=True, check_finite=False)
            used = jitter
        except np.linalg.LinAlgError:
            L, used = chol_with_jitter(K, scale)
    else:
        L, used = chol_with_jitter(K, scale)
    alpha = cho_solve((L, True), centered, check_finite=False)
    return GPPosterior(
        inputs=X,
        targets=y,
        hyper=hyper,
        chol=L,
        alpha=alpha,
        mean_offset=offset,
        jitter=used,
    )


def log_marginal_likelihood(
    inputs, targets, hyper: KernelHyperparameters, mean: float | None = None
) -> float:
    """Gaussian-likelihood GP log marginal likelihood.

    Returns -inf when the Gram matrix cannot be factored at the starting
    jitter, so MCMC over hyperparameters treats that region as forbidden
    rather than escalating jitter (which would perturb the target density).
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] == 0:
        return 0.0
    offset = float(np.mean(y)) if mean is None else float(mean)
    centered = y - offset
    n = X.shape[0]
    K = matern52_matrix(X, X, hyper)
    K[np.diag_indices_from(K)] += hyper.noise_std**2 + JITTER_START * hyper.amplitude**2
    try:
        L = cholesky(K, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = cho_solve((L, True), centered, check_finite=False)
    return float(
        -0.5 * centered @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2.0 * np.pi)
    )

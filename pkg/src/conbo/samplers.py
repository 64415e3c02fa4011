"""MCMC over kernel hyperparameters and latent function values.

Two samplers do all the inference work:

* coordinate-wise slice sampling (with linear step-out and shrinkage) over
  kernel hyperparameters in log space, and
* elliptical slice sampling over latent function values when the likelihood
  is not Gaussian.

For latent-Gaussian models the two are composed through a whitening move:
the latent vector is mapped to uncorrelated coordinates under the current
kernel, the hyperparameters are slice-sampled with those coordinates held
fixed, and the latent values are remapped before an elliptical slice update.
That composite transition leaves the joint posterior invariant and avoids
the slow mixing caused by coupling between latents and kernel scales.

All samplers are deterministic functions of their `numpy.random.Generator`
argument; identical seeds and inputs reproduce identical chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InputError, NumericalError, StateError
from .gp import KernelHyperparameters, chol_with_jitter, matern52_matrix

#: Default slice-sampling bracket width in log space.
SLICE_WIDTH = 1.0
#: Cap on bracket expansions per side.
MAX_STEPOUT = 100
#: Cap on shrinkage iterations before declaring the state numerically broken.
MAX_SHRINK = 1000


@dataclass(frozen=True)
class HyperPrior:
    """Independent Gaussian priors on log hyperparameters.

    Noise terms are optional: models with a noise-free likelihood (latent
    constraint GPs) leave `noise_log_mean`/`noise_log_std` as None and the
    sampled hyperparameter vectors then exclude a noise coordinate.
    """

    length_scale_log_mean: np.ndarray
    length_scale_log_std: np.ndarray
    amplitude_log_mean: float = 0.0
    amplitude_log_std: float = 1.0
    noise_log_mean: float | None = None
    noise_log_std: float | None = None

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.length_scale_log_mean, dtype=float))
        s = np.atleast_1d(np.asarray(self.length_scale_log_std, dtype=float))
        object.__setattr__(self, "length_scale_log_mean", m)
        object.__setattr__(self, "length_scale_log_std", s)
        if m.shape != s.shape:
            raise InputError("length-scale prior mean/std shapes differ")
        if not np.all(s > 0):
            raise InputError("prior stds must be strictly positive")
        if self.amplitude_log_std <= 0:
            raise InputError("prior stds must be strictly positive")
        if (self.noise_log_mean is None) != (self.noise_log_std is None):
            raise InputError("noise prior mean and std must be given together")
        if self.noise_log_std is not None and self.noise_log_std <= 0:
            raise InputError("prior stds must be strictly positive")
        mean_parts = [m, [self.amplitude_log_mean]]
        std_parts = [s, [self.amplitude_log_std]]
        if self.noise_log_mean is not None:
            mean_parts.append([self.noise_log_mean])
            std_parts.append([self.noise_log_std])
        means = np.concatenate([np.asarray(p, dtype=float) for p in mean_parts])
        stds = np.concatenate([np.asarray(p, dtype=float) for p in std_parts])
        object.__setattr__(self, "_means", means)
        object.__setattr__(self, "_stds", stds)
        object.__setattr__(
            self,
            "_log_norm",
            float(-np.sum(np.log(stds)) - 0.5 * len(means) * math.log(2 * math.pi)),
        )

    @classmethod
    def default(cls, dim: int, with_noise: bool = True) -> "HyperPrior":
        """Weakly informative defaults for inputs normalized to the unit
        cube: log length scales N(log 0.1, 1), log amplitude N(0, 1), and
        log noise N(log 0.01, 1) when noise is modeled."""
        return cls(
            length_scale_log_mean=np.full(dim, math.log(0.1)),
            length_scale_log_std=np.ones(dim),
            amplitude_log_mean=0.0,
            amplitude_log_std=1.0,
            noise_log_mean=math.log(0.01) if with_noise else None,
            noise_log_std=1.0 if with_noise else None,
        )

    @property
    def dim(self) -> int:
        return self.length_scale_log_mean.shape[0]

    @property
    def models_noise(self) -> bool:
        return self.noise_log_mean is not None

    @property
    def size(self) -> int:
        return self.dim + 1 + (1 if self.models_noise else 0)

    def means(self) -> np.ndarray:
        return self._means.copy()

    def stds(self) -> np.ndarray:
        return self._stds.copy()

    def pack(self, hyper: KernelHyperparameters) -> np.ndarray:
        """Hyperparameters to a log-space vector in prior coordinate order."""
        if hyper.dim != self.dim:
            raise InputError("hyperparameter dimension does not match prior")
        parts = [np.log(hyper.length_scales), [math.log(hyper.amplitude)]]
        if self.models_noise:
            if hyper.noise_std <= 0:
                raise InputError("noise_std must be positive when noise is modeled in log space")
            parts.append([math.log(hyper.noise_std)])
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])

    def unpack(self, vec: np.ndarray) -> KernelHyperparameters:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise InputError("hyperparameter vector has the wrong size")
        noise = math.exp(vec[self.dim + 1]) if self.models_noise else 0.0
        return KernelHyperparameters(
            length_scales=np.exp(vec[: self.dim]),
            amplitude=math.exp(vec[self.dim]),
            noise_std=noise,
        )

    def log_density(self, vec: np.ndarray) -> float:
        z = (vec - self._means) / self._stds
        return float(-0.5 * z @ z) + self._log_norm

    def sample(self, rng: np.random.Generator) -> KernelHyperparameters:
        return self.unpack(self._means + self._stds * rng.standard_normal(self.size))


@dataclass
class HyperEnsemble:
    """A set of posterior hyperparameter samples, with one latent vector per
    sample for models whose likelihood is not Gaussian."""

    samples: list[KernelHyperparameters]
    latent_values: list[np.ndarray] | None = None

    def __post_init__(self):
        if len(self.samples) < 1:
            raise InputError("ensemble must contain at least one sample")
        if self.latent_values is not None and len(self.latent_values) != len(self.samples):
            raise InputError("one latent vector per hyperparameter sample is required")

    @property
    def size(self) -> int:
        return len(self.samples)


def _slice_1d(
    logf: Callable[[float], float],
    x0: float,
    f0: float,
    rng: np.random.Generator,
    width: float,
    max_stepout: int,
) -> tuple[float, float]:
    """One univariate slice-sampling update. Returns (new x, logf(new x))."""
    threshold = f0 + math.log(rng.uniform())
    u = rng.uniform()
    left = x0 - u * width
    right = left + width
    for _ in range(max_stepout):
        if logf(left) <= threshold:
            break
        left -= width
    for _ in range(max_stepout):
        if logf(right) <= threshold:
            break
        right += width
    for _ in range(MAX_SHRINK):
        x = rng.uniform(left, right)
        fx = logf(x)
        if fx > threshold:
            return x, fx
        if x < x0:
            left = x
        else:
            right = x
    raise NumericalError("slice sampler failed to find an acceptable point while shrinking")


def slice_sample_hypers(
    log_lik: Callable[[KernelHyperparameters], float],
    prior: HyperPrior,
    current: KernelHyperparameters,
    steps: int,
    rng: np.random.Generator,
    width: float = SLICE_WIDTH,
    max_stepout: int = MAX_STEPOUT,
) -> KernelHyperparameters:
    """Advance a hyperparameter chain by `steps` coordinate sweeps.

    The stationary distribution is proportional to prior(h) * exp(log_lik(h))
    with each sweep updating every log coordinate once via step-out and
    shrinkage. `log_lik` maps hyperparameters to a data log likelihood and
    may return -inf for forbidden regions.
    """
    if steps < 1:
        raise InputError("steps must be >= 1")
    vec = prior.pack(current)

    def logpost(v: np.ndarray) -> float:
        return prior.log_density(v) + log_lik(prior.unpack(v))

    f = logpost(vec)
    if not np.isfinite(f):
        raise StateError("log likelihood is not finite at the current hyperparameters")
    for _ in range(steps):
        for i in range(prior.size):
            def logf(x: float, i=i) -> float:
                trial = vec.copy()
                trial[i] = x
                val = logpost(trial)
                if math.isnan(val):
                    raise StateError("log likelihood returned NaN during slice sampling")
                return val

            vec[i], f = _slice_1d(logf, vec[i], f, rng, width, max_stepout)
    return prior.unpack(vec)


def elliptical_slice_sample(
    latent: np.ndarray,
    prior_factor: np.ndarray,
    log_lik: Callable[[np.ndarray], float],
    rng: np.random.Generator,
) -> np.ndarray:
    """One elliptical slice sampling transition.

    Leaves the density proportional to N(latent; 0, L L^T) * exp(log_lik)
    invariant, where `prior_factor` is the lower Cholesky factor L of the
    prior covariance. Always accepts: the angle bracket shrinks toward the
    current state, whose likelihood exceeds the threshold by construction.
    """
    latent = np.asarray(latent, dtype=float)
    n = latent.shape[0]
    if n == 0:
        return latent.copy()
    if prior_factor.shape != (n, n):
        raise InputError("latent length does not match prior factor dimension")

    nu = prior_factor @ rng.standard_normal(n)
    f0 = log_lik(latent)
    if math.isnan(f0):
        raise StateError("log likelihood is NaN at the current latent state")
    threshold = f0 + math.log(rng.uniform())

    phi = rng.uniform(0.0, 2.0 * math.pi)
    phi_min, phi_max = phi - 2.0 * math.pi, phi
    while True:
        proposal = latent * math.cos(phi) + nu * math.sin(phi)
        f = log_lik(proposal)
        if math.isnan(f):
            raise StateError("log likelihood returned NaN during elliptical slice sampling")
        if f > threshold:
            return proposal
        if phi > 0:
            phi_max = phi
        else:
            phi_min = phi
        if phi_max - phi_min < 1e-14:
            raise NumericalError("elliptical slice bracket collapsed without acceptance")
        phi = rng.uniform(phi_min, phi_max)


def whitened_transition(
    hypers: KernelHyperparameters,
    latent: np.ndarray,
    inputs: np.ndarray,
    log_lik: Callable[[np.ndarray], float],
    prior: HyperPrior,
    rng: np.random.Generator,
    width: float = SLICE_WIDTH,
    kernel: Callable[[KernelHyperparameters], np.ndarray] | None = None,
) -> tuple[KernelHyperparameters, np.ndarray]:
    """One composite update of (hyperparameters, latent values).

    The latent vector is whitened under the current kernel factor, the
    hyperparameters are slice-sampled with the whitened coordinates held
    fixed (so the implied latent values move with the kernel), the latents
    are remapped, and finally one elliptical slice update refreshes them.
    The joint posterior over (hypers, latents) is stationary.

    `kernel` optionally supplies a precomputed Gram-matrix builder for the
    fixed inputs (callers running many transitions share one).
    """
    latent = np.asarray(latent, dtype=float)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[0] != latent.shape[0]:
        raise InputError("latent length does not match number of inputs")

    if kernel is None:
        sq = pairwise_sq_diffs(inputs)
        kernel = lambda h: kernel_from_sq_diffs(sq, h)

    def factor(h: KernelHyperparameters) -> np.ndarray:
        L, _ = chol_with_jitter(kernel(h), h.amplitude**2)
        return L

    if latent.shape[0] == 0:
        new_hypers = slice_sample_hypers(lambda h: 0.0, prior, hypers, 1, rng, width=width)
        return new_hypers, latent.copy()

    L = factor(hypers)
    nu = solve_triangular(L, latent, lower=True, check_finite=False)

    def hyper_log_lik(h: KernelHyperparameters) -> float:
        return log_lik(factor(h) @ nu)

    new_hypers = slice_sample_hypers(hyper_log_lik, prior, hypers, 1, rng, width=width)
    L_new = factor(new_hypers)
    remapped = L_new @ nu
    new_latent = elliptical_slice_sample(remapped, L_new, log_lik, rng)
    return new_hypers, new_latent


def spawn_rngs(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive n independent generators from one parent, deterministically."""
    return rng.spawn(n)

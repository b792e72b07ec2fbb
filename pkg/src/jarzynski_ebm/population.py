"""Weighted walker ensembles and the estimators built on them.

All weight arithmetic happens on log-weights ``A`` through log-sum-exp.
The population also carries ``log_z_offset``, the log partition-function
ratio banked at each resampling event, so that

    log Z_est = log Z_theta0 + log_z_offset + log mean exp(A)

stays continuous when the weights are reset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from . import resampling


@dataclass
class Population:
    positions: np.ndarray
    log_weights: np.ndarray
    log_z_offset: float = 0.0
    # delta-method variance of log_z_offset, summed over finished segments
    log_z_var: float = 0.0
    n_resamples: int = 0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.log_weights = np.asarray(self.log_weights, dtype=np.float64)
        if self.positions.shape[0] < 1:
            raise ValueError("a population needs at least one walker")
        if self.log_weights.shape != (self.positions.shape[0],):
            raise ValueError("need one log-weight per walker")

    @classmethod
    def fresh(cls, positions):
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        return cls(positions, np.zeros(positions.shape[0]))

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def copy(self) -> "Population":
        return Population(
            self.positions.copy(), self.log_weights.copy(), self.log_z_offset, self.log_z_var, self.n_resamples
        )


def initialize(model, theta, n_walkers, rng) -> Population:
    """Walkers drawn exactly from rho_theta, all log-weights zero."""
    return Population.fresh(model.sample(theta, n_walkers, rng))


def normalized_weights(pop: Population) -> np.ndarray:
    return softmax(pop.log_weights)


def log_mean_exp(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(logsumexp(a) - np.log(a.size))


def ess_from_log_weights(a) -> float:
    """(mean e^A)^2 / mean e^{2A}, a number in [1/N, 1]."""
    a = np.asarray(a, dtype=np.float64)
    if np.all(a == a[0]):
        return 1.0
    log_ess = 2.0 * logsumexp(a) - logsumexp(2.0 * a) - np.log(a.size)
    return float(min(1.0, np.exp(log_ess)))


def ess(pop: Population) -> float:
    return ess_from_log_weights(pop.log_weights)


def weighted_mean(p, values):
    """Sum_i p_i values_i in a fixed row order."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        return float(np.sum(p * values))
    return np.sum(p[:, None] * values, axis=0)


def grad_estimator(pop: Population, model, theta, data) -> np.ndarray:
    """Weighted walker average of dU/dtheta minus the data average.

    This is the ascent direction on the log-likelihood, i.e. minus the
    cross-entropy gradient: a plain optimizer step adds it to theta.
    """
    walker_grads = model.evaluate(theta, pop.positions)[2]
    data_grads = model.evaluate(theta, np.atleast_2d(data))[2]
    return weighted_mean(normalized_weights(pop), walker_grads) - data_grads.mean(axis=0)


def log_partition_estimate(pop: Population, log_z_theta0: float) -> float:
    if not np.isfinite(log_z_theta0):
        raise ValueError("log Z at theta_0 must be finite")
    return log_z_theta0 + pop.log_z_offset + log_mean_exp(pop.log_weights)


def log_partition_stderr(pop: Population) -> float:
    """Delta-method standard error of ``log_partition_estimate``.

    Each segment between resamples contributes ``(1/ESS - 1)/N``.
    """
    seg = (1.0 / ess(pop) - 1.0) / pop.size
    return float(np.sqrt(pop.log_z_var + seg))


def cross_entropy_estimate(pop: Population, model, theta, data, log_z_theta0: float) -> float:
    data_energy = model.evaluate(theta, np.atleast_2d(data))[0]
    return log_partition_estimate(pop, log_z_theta0) + float(data_energy.mean())


def resample(pop: Population, scheme, rng) -> np.ndarray:
    """Resample in place unconditionally; returns the ancestor indices."""
    lme = log_mean_exp(pop.log_weights)
    pop.log_z_var += (1.0 / ess(pop) - 1.0) / pop.size
    idx = resampling.select(scheme, normalized_weights(pop), rng)
    pop.log_z_offset += lme
    pop.positions = pop.positions[idx]
    pop.log_weights = np.zeros(pop.size)
    pop.n_resamples += 1
    return idx


def maybe_resample(pop: Population, threshold: float, scheme=resampling.DEFAULT_SCHEME, rng=None) -> bool:
    """Resample when ESS is strictly below ``threshold``; ties do not trigger."""
    if not 0.0 <= threshold < 1.0 + 1e-12:
        raise ValueError("ESS threshold must lie in [0, 1]")
    if ess(pop) < threshold:
        resample(pop, scheme, rng)
        return True
    return False


def write_walkers(path, pop: Population) -> None:
    """Columnar dump: one row per walker, columns x_1..x_d, A."""
    header = ",".join([f"x_{j + 1}" for j in range(pop.dim)] + ["A"])
    table = np.column_stack([pop.positions, pop.log_weights])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")


def read_walkers(path) -> Population:
    table = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
    return Population(table[:, :-1], table[:, -1])

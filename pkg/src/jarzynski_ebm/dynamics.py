"""ULA transitions and the Jarzynski weight bookkeeping.

A walker moved by one ULA step under ``theta_prev`` picks up the log-weight
increment

    -alpha(theta_next; x_next, x_prev) + alpha(theta_prev; x_prev, x_next)

with ``alpha(theta; x, y) = U(x) + (y - x).grad U(x) / 2 + h |grad U(x)|^2 / 4``.
Walkers that are not moved pick up ``U_prev(x) - U_next(x)`` instead.

Randomness: every stochastic draw comes from a counter-based Philox stream
keyed by ``(seed, purpose, iteration, ...)``.  Row ``i`` of a noise block
belongs to walker ``i``, so the numbers a walker sees do not depend on how
the work is split between threads.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

THREADS_ENV = "JEBM_NUM_THREADS"
CHUNK_ROWS = 4096

STREAM_INIT = 0
STREAM_ULA = 1
STREAM_RESAMPLE = 2
STREAM_BATCH = 3
STREAM_DATA = 4
STREAM_CD = 5
STREAM_THETA0 = 6
STREAM_TEACHER = 7


class NumericalBlowup(RuntimeError):
    """A position, weight or gradient became non-finite."""

    def __init__(self, message, walker=None, iteration=None):
        super().__init__(message)
        self.walker = walker
        self.iteration = iteration
        self.result = None


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the counter ``key`` under ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def walker_noise(seed, iteration, n_walkers, dim, purpose=STREAM_ULA, *extra):
    """Standard normal block, row i is walker i's draw at this iteration."""
    return stream(seed, purpose, iteration, *extra).standard_normal((n_walkers, dim))


def num_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n <= 0:
        return os.cpu_count() or 1
    return n


def evaluate_walkers(model, theta, x):
    """``model.evaluate`` over walker rows, chunked across threads.

    Chunk boundaries are fixed by ``CHUNK_ROWS`` and every operation is
    row-local, so the output is bit-identical for any thread count.
    """
    n = x.shape[0]
    threads = num_threads()
    if threads == 1 or n <= CHUNK_ROWS:
        return model.evaluate(theta, x)
    bounds = [(s, min(s + CHUNK_ROWS, n)) for s in range(0, n, CHUNK_ROWS)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda se: model.evaluate(theta, x[se[0] : se[1]]), bounds))
    return tuple(np.concatenate(cols, axis=0) for cols in zip(*parts))


@dataclass
class StepParams:
    """ULA step size ``h`` and an optional fixed standard-normal draw."""

    h: float
    noise: np.ndarray | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("step size h must be positive")


def check_step_size(model, theta, h) -> bool:
    """Warn when ``h`` exceeds 2/L for the model's Hessian bound L."""
    try:
        L = model.hessian_bound(theta)
    except NotImplementedError:
        return True
    if h >= 2.0 / L:
        warnings.warn(
            f"step size h={h} is not below 2/L={2.0 / L:.4g} for {model.name}; "
            "ULA may be unstable away from the modes",
            RuntimeWarning,
            stacklevel=2,
        )
        return False
    return True


def alpha_terms(energy, grad, x, y, h):
    """alpha from precomputed ``U(x)`` and ``grad U(x)``."""
    return energy + 0.5 * np.sum((y - x) * grad, axis=-1) + 0.25 * h * np.sum(grad * grad, axis=-1)


def alpha(model, theta, x, y, h):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    u, g, _ = model.evaluate(theta, np.atleast_2d(x))
    out = alpha_terms(u, g, np.atleast_2d(x), np.atleast_2d(y), h)
    return float(out[0]) if x.ndim == 1 else out


def ula_move(x, grad, h, noise):
    return x - h * grad + np.sqrt(2.0 * h) * noise


def check_finite(x, what, iteration=None):
    """Raise NumericalBlowup naming the first walker with a non-finite entry."""
    x = np.asarray(x)
    bad = ~np.all(np.isfinite(x), axis=1) if x.ndim > 1 else ~np.isfinite(np.atleast_1d(x))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        at = "" if iteration is None else f" at iteration {iteration}"
        raise NumericalBlowup(f"non-finite {what} for walker {i}{at}", walker=i, iteration=iteration)


def ula_step(model, theta, x, step: StepParams, rng=None):
    """One step ``x - h grad U(x) + sqrt(2h) xi``."""
    x = np.asarray(x, dtype=np.float64)
    xb = np.atleast_2d(x)
    if step.noise is not None:
        xi = np.asarray(step.noise, dtype=np.float64).reshape(xb.shape)
    else:
        if rng is None:
            raise ValueError("either a noise array or an rng is required")
        xi = rng.standard_normal(xb.shape)
    out = ula_move(xb, model.evaluate(theta, xb)[1], step.h, xi)
    check_finite(out, "position")
    return out[0] if x.ndim == 1 else out


def weight_increment(model, theta_prev, theta_next, x_prev, x_next, h):
    """Log-weight change of a walker moved ``x_prev -> x_next`` under ``theta_prev``.

    Note the argument order: the alpha at the new parameters is evaluated
    at ``(x_next, x_prev)``, the one at the old parameters at ``(x_prev, x_next)``.
    """
    return -alpha(model, theta_next, x_next, x_prev, h) + alpha(model, theta_prev, x_prev, x_next, h)


def frozen_weight_increment(model, theta_prev, theta_next, x):
    """Log-weight change of a walker held fixed while theta moves."""
    return model.energy(theta_prev, x) - model.energy(theta_next, x)


def log_transition_density(model, theta, x, y, h):
    """log of the Gaussian ULA kernel density of ``y`` given ``x``."""
    if not h > 0:
        raise ValueError("step size h must be positive")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xb, yb = np.atleast_2d(x), np.atleast_2d(y)
    g = model.evaluate(theta, xb)[1]
    r = yb - xb + h * g
    d = xb.shape[1]
    out = -0.5 * d * np.log(4.0 * np.pi * h) - np.sum(r * r, axis=1) / (4.0 * h)
    return float(out[0]) if x.ndim == 1 else out

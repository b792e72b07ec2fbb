"""Training loops: Jarzynski-weighted SMC (full and walker-mini-batched),
persistent contrastive divergence and contrastive divergence.

Each trainer returns a ``TrainResult`` whose history holds one
``TrainRecord`` for the initial state (k = 0) and one after every
iteration (k = 1..K).  Runs are replayable: all randomness is drawn from
streams keyed by ``(config.seed, purpose, iteration)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import dynamics as dyn
from . import population as popm
from .population import Population
from .resampling import SCHEMES

log = logging.getLogger(__name__)

ALGORITHMS = ("jarzynski", "pcd", "cd")
OPTIMIZERS = ("sgd", "adam")


@dataclass
class TrainConfig:
    """Hyperparameters shared by the trainers.

    ``lr`` maps parameter-block names (``"a"``, ``"b"``, ``"z"``, ``"mu"``)
    to learning rates; ``"default"`` covers any block not listed.
    ``ess_threshold`` is the direct ESS fraction below which walkers are
    resampled, either a constant or a callable ``k -> c_k``.  A reciprocal
    setting ``1/c = 1.05`` means ``ess_threshold = 1/1.05``; a sweep value
    ``c`` quoted as ``ESS_thresh = N/(c+1)`` means ``ess_threshold = 1/(c+1)``.
    """

    algorithm: str = "jarzynski"
    K: int = 1000
    h: float = 0.1
    lr: dict = field(default_factory=lambda: {"default": 0.1})
    n_walkers: int = 1000
    walker_batch: int | None = None
    data_batch: int | None = None
    resampler: str = "systematic"
    ess_threshold: float | Callable[[int], float] = 1.0 / 1.05
    cd_steps: int = 4
    seed: int = 0
    optimizer: str = "sgd"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def validate(self, n_data: int | None = None):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.n_walkers < 1:
            raise ValueError("need at least one walker")
        if self.walker_batch is not None and not 1 <= self.walker_batch <= self.n_walkers:
            raise ValueError("walker batch size must lie in [1, n_walkers]")
        if self.data_batch is not None:
            if self.data_batch < 1 or (n_data is not None and self.data_batch > n_data):
                raise ValueError("data batch size must lie in [1, n_data]")
        if self.resampler not in SCHEMES:
            raise ValueError(f"unknown resampler {self.resampler!r}; choose from {SCHEMES}")
        if self.algorithm == "cd" and self.cd_steps < 1:
            raise ValueError("CD needs at least one inner ULA step")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        if not all(r > 0 for r in self.lr.values()):
            raise ValueError("learning rates must be positive")
        if not callable(self.ess_threshold) and not 0.0 <= self.ess_threshold <= 1.0:
            raise ValueError("ess_threshold must lie in [0, 1]")

    def threshold(self, k: int) -> float:
        return self.ess_threshold(k) if callable(self.ess_threshold) else self.ess_threshold

    def rates(self, model) -> np.ndarray:
        blocks = model.param_blocks()
        unknown = set(self.lr) - set(blocks) - {"default"}
        if unknown:
            raise ValueError(f"learning rates given for unknown blocks {sorted(unknown)}")
        out = np.empty(model.n_params)
        for name, sl in blocks.items():
            if name in self.lr:
                out[sl] = self.lr[name]
            elif "default" in self.lr:
                out[sl] = self.lr["default"]
            else:
                raise ValueError(f"no learning rate for block {name!r}")
        return out


@dataclass
class TrainRecord:
    k: int
    theta: np.ndarray
    ess: float | None
    log_z_est: float | None
    ce_est: float | None
    ce_exact: float | None
    p_k: float | None
    resampled: bool
    log_z_stderr: float | None = None


@dataclass
class TrainResult:
    theta: np.ndarray
    population: Population
    history: list
    aborted: bool = False
    error: str | None = None


@dataclass
class OptimizerState:
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def optimizer_step(theta, direction, state: OptimizerState, rates, kind="sgd", betas=(0.9, 0.999), eps=1e-8):
    """Move ``theta`` along the ascent direction ``direction``.

    ``sgd``: theta + rates * direction.  ``adam``: the usual bias-corrected
    first/second moment update applied to the same direction.
    """
    theta = np.asarray(theta, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != theta.shape:
        raise ValueError("direction must be shaped like theta")
    if kind == "sgd":
        return theta + rates * direction, OptimizerState(state.step + 1)
    if kind != "adam":
        raise ValueError(f"unknown optimizer {kind!r}")
    b1, b2 = betas
    m = direction * (1 - b1) if state.m is None else b1 * state.m + (1 - b1) * direction
    v = direction**2 * (1 - b2) if state.v is None else b2 * state.v + (1 - b2) * direction**2
    t = state.step + 1
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    return theta + rates * m_hat / (np.sqrt(v_hat) + eps), OptimizerState(t, m, v)


def gmm_default_theta0(dim, rng):
    """a^1 = -0.1, b^1 = 0.1, remaining coordinates 0.01 * N(0, 1), z = 0."""
    a = 1e-2 * rng.standard_normal(dim)
    b = 1e-2 * rng.standard_normal(dim)
    a[0], b[0] = -0.1, 0.1
    return np.concatenate([a, b, [0.0]])


class _DataBatches:
    """Without-replacement mini-batches, reshuffled every epoch."""

    def __init__(self, data, batch, seed):
        self.data = data
        n = data.shape[0]
        self.batch = None if batch is None or batch >= n else batch
        self.seed = seed
        self.per_epoch = 1 if self.batch is None else n // self.batch
        self._epoch = None
        self._perm = None

    def __call__(self, k):
        if self.batch is None:
            return self.data
        epoch, j = divmod(k, self.per_epoch)
        if epoch != self._epoch:
            self._perm = dyn.stream(self.seed, dyn.STREAM_DATA, epoch).permutation(self.data.shape[0])
            self._epoch = epoch
        return self.data[self._perm[j * self.batch : (j + 1) * self.batch]]


def _mass(model, theta):
    return model.mass(theta) if hasattr(model, "mass") else None


def _setup(model, theta0, data, config):
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[1] != model.dim:
        raise ValueError(f"data has dimension {data.shape[1]}, model expects {model.dim}")
    if not np.all(np.isfinite(data)):
        raise ValueError("data must be finite")
    config.validate(data.shape[0])
    theta = model.check_theta(theta0).copy()
    dyn.check_step_size(model, theta, config.h)
    return theta, data, config.rates(model)


def _abort(err, iteration, theta, pop, history):
    err.iteration = iteration if err.iteration is None else err.iteration
    err.result = TrainResult(theta, pop, history, aborted=True, error=str(err))
    log.error("run aborted at iteration %d: %s", iteration, err)
    return err


def train_jarzynski(model, theta0, data, config: TrainConfig, on_record=None, population=None) -> TrainResult:
    """SMC training with Jarzynski-corrected ULA walkers.

    Per iteration: gradient estimate from all N weighted walkers, optimizer
    step, ULA move + weight update for a batch of ``walker_batch`` walkers
    (all of them by default), frozen-walker weight update for the rest,
    then resampling when the ESS drops below the threshold.
    """
    theta, data, rates = _setup(model, theta0, data, config)
    N, h, seed = config.n_walkers, config.h, config.seed
    n_batch = config.walker_batch or N
    log_z0 = model.log_partition(theta)
    exact_z = log_z0 is not None
    if not exact_z:
        log_z0 = 0.0

    if population is None:
        population = popm.initialize(model, theta, N, dyn.stream(seed, dyn.STREAM_INIT))
    pop = population
    if pop.size != N:
        raise ValueError("population size does not match n_walkers")

    batches = _DataBatches(data, config.data_batch, seed)
    opt_state = OptimizerState()
    history = []
    U, G, T = dyn.evaluate_walkers(model, theta, pop.positions)
    ess_val, resampled = popm.ess(pop), False

    k = 0
    try:
        for k in range(config.K + 1):
            xd = batches(k)
            dU, _, dT = model.evaluate(theta, xd)
            mean_data_u = float(dU.mean())
            log_z_est = popm.log_partition_estimate(pop, log_z0)
            rec = TrainRecord(
                k=k,
                theta=theta.copy(),
                ess=ess_val,
                log_z_est=log_z_est,
                ce_est=log_z_est + mean_data_u,
                ce_exact=model.log_partition(theta) + mean_data_u if exact_z else None,
                p_k=_mass(model, theta),
                resampled=resampled,
                log_z_stderr=popm.log_partition_stderr(pop),
            )
            history.append(rec)
            if on_record is not None:
                on_record(rec)
            if k == config.K:
                break

            p = popm.normalized_weights(pop)
            direction = popm.weighted_mean(p, T) - dT.mean(axis=0)
            if not np.all(np.isfinite(direction)):
                raise dyn.NumericalBlowup(f"non-finite gradient estimate at iteration {k}", iteration=k)
            theta_new, opt_state = optimizer_step(
                theta, direction, opt_state, rates, config.optimizer, config.adam_betas, config.adam_eps
            )

            X = pop.positions
            noise = dyn.walker_noise(seed, k, N, model.dim)
            if n_batch == N:
                moved = slice(None)
            else:
                moved = np.sort(dyn.stream(seed, dyn.STREAM_BATCH, k).permutation(N)[:n_batch])
            X_new = X.copy()
            X_new[moved] = dyn.ula_move(X[moved], G[moved], h, noise[moved])
            dyn.check_finite(X_new, "position", k)

            U1, G1, T1 = dyn.evaluate_walkers(model, theta_new, X_new)
            inc = U - U1  # frozen walkers: x unchanged
            inc[moved] = -dyn.alpha_terms(U1[moved], G1[moved], X_new[moved], X[moved], h) + dyn.alpha_terms(
                U[moved], G[moved], X[moved], X_new[moved], h
            )
            A = pop.log_weights + inc
            dyn.check_finite(A, "log-weight", k)
            pop.positions, pop.log_weights = X_new, A

            ess_val = popm.ess(pop)
            resampled = ess_val < config.threshold(k + 1)
            if resampled:
                idx = popm.resample(pop, config.resampler, dyn.stream(seed, dyn.STREAM_RESAMPLE, k))
                U1, G1, T1 = U1[idx], G1[idx], T1[idx]
            theta, U, G, T = theta_new, U1, G1, T1
    except dyn.NumericalBlowup as err:
        raise _abort(err, k, theta, pop, history) from None

    return TrainResult(theta, pop, history)


def train_pcd(model, theta0, data, config: TrainConfig, on_record=None) -> TrainResult:
    """Persistent CD: unweighted ULA walkers started at data points."""
    theta, data, rates = _setup(model, theta0, data, config)
    N, h, seed = config.n_walkers, config.h, config.seed
    exact_z = model.log_partition(theta) is not None
    start = dyn.stream(seed, dyn.STREAM_INIT).integers(0, data.shape[0], N)
    X = data[start].copy()
    batches = _DataBatches(data, config.data_batch, seed)
    opt_state = OptimizerState()
    history = []
    k = 0
    try:
        for k in range(config.K + 1):
            dU, _, dT = model.evaluate(theta, batches(k))
            mean_data_u = float(dU.mean())
            rec = TrainRecord(
                k=k,
                theta=theta.copy(),
                ess=None,
                log_z_est=None,
                ce_est=None,
                ce_exact=model.log_partition(theta) + mean_data_u if exact_z else None,
                p_k=_mass(model, theta),
                resampled=False,
            )
            history.append(rec)
            if on_record is not None:
                on_record(rec)
            if k == config.K:
                break
            _, G, T = dyn.evaluate_walkers(model, theta, X)
            direction = T.mean(axis=0) - dT.mean(axis=0)
            if not np.all(np.isfinite(direction)):
                raise dyn.NumericalBlowup(f"non-finite gradient estimate at iteration {k}", iteration=k)
            theta_new, opt_state = optimizer_step(
                theta, direction, opt_state, rates, config.optimizer, config.adam_betas, config.adam_eps
            )
            X = dyn.ula_move(X, G, h, dyn.walker_noise(seed, k, N, model.dim))
            dyn.check_finite(X, "position", k)
            theta = theta_new
    except dyn.NumericalBlowup as err:
        raise _abort(err, k, theta, Population.fresh(X), history) from None
    return TrainResult(theta, Population.fresh(X), history)


def train_cd(model, theta0, data, config: TrainConfig, on_record=None) -> TrainResult:
    """CD-P: every iteration restarts N walkers at data points and runs P ULA steps."""
    theta, data, rates = _setup(model, theta0, data, config)
    N, h, seed, P = config.n_walkers, config.h, config.seed, config.cd_steps
    if P < 1:
        raise ValueError("CD needs at least one inner ULA step")
    exact_z = model.log_partition(theta) is not None
    batches = _DataBatches(data, config.data_batch, seed)
    opt_state = OptimizerState()
    history = []
    X = data[:0]
    k = 0
    try:
        for k in range(config.K + 1):
            dU, _, dT = model.evaluate(theta, batches(k))
            mean_data_u = float(dU.mean())
            rec = TrainRecord(
                k=k,
                theta=theta.copy(),
                ess=None,
                log_z_est=None,
                ce_est=None,
                ce_exact=model.log_partition(theta) + mean_data_u if exact_z else None,
                p_k=_mass(model, theta),
                resampled=False,
            )
            history.append(rec)
            if on_record is not None:
                on_record(rec)
            if k == config.K:
                break
            X = data[dyn.stream(seed, dyn.STREAM_CD, k).integers(0, data.shape[0], N)]
            for p in range(P):
                G = dyn.evaluate_walkers(model, theta, X)[1]
                X = dyn.ula_move(X, G, h, dyn.walker_noise(seed, k, N, model.dim, dyn.STREAM_CD, p + 1))
            dyn.check_finite(X, "position", k)
            T = dyn.evaluate_walkers(model, theta, X)[2]
            direction = T.mean(axis=0) - dT.mean(axis=0)
            if not np.all(np.isfinite(direction)):
                raise dyn.NumericalBlowup(f"non-finite gradient estimate at iteration {k}", iteration=k)
            theta, opt_state = optimizer_step(
                theta, direction, opt_state, rates, config.optimizer, config.adam_betas, config.adam_eps
            )
    except dyn.NumericalBlowup as err:
        raise _abort(err, k, theta, Population.fresh(X) if len(X) else None, history) from None
    return TrainResult(theta, Population.fresh(X) if len(X) else None, history)


def train(model, theta0, data, config: TrainConfig, on_record=None) -> TrainResult:
    if config.algorithm == "jarzynski":
        return train_jarzynski(model, theta0, data, config, on_record)
    if config.algorithm == "pcd":
        return train_pcd(model, theta0, data, config, on_record)
    if config.algorithm == "cd":
        return train_cd(model, theta0, data, config, on_record)
    raise ValueError(f"unknown algorithm {config.algorithm!r}")


def follow_protocol(
    model,
    thetas,
    n_walkers,
    h,
    seed=0,
    ess_threshold=0.0,
    resampler="systematic",
    population=None,
    on_step=None,
):
    """Run weighted ULA walkers along a prescribed parameter path.

    ``thetas`` has shape ``(K + 1, n_params)``.  Returns the final
    population and the log-partition estimate (relative to ``thetas[0]``)
    after each step, ``K + 1`` values starting at 0.  ``on_step(k, pop,
    resampled)`` is called after every step.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    for th in thetas:
        model.check_theta(th)
    pop = population or popm.initialize(model, thetas[0], n_walkers, dyn.stream(seed, dyn.STREAM_INIT))
    U, G, _ = dyn.evaluate_walkers(model, thetas[0], pop.positions)
    log_z = np.empty(thetas.shape[0])
    log_z[0] = popm.log_partition_estimate(pop, 0.0)
    for k in range(thetas.shape[0] - 1):
        X = pop.positions
        X_new = dyn.ula_move(X, G, h, dyn.walker_noise(seed, k, pop.size, model.dim))
        dyn.check_finite(X_new, "position", k)
        U1, G1, _ = dyn.evaluate_walkers(model, thetas[k + 1], X_new)
        inc = -dyn.alpha_terms(U1, G1, X_new, X, h) + dyn.alpha_terms(U, G, X, X_new, h)
        pop.positions, pop.log_weights = X_new, pop.log_weights + inc
        dyn.check_finite(pop.log_weights, "log-weight", k)
        resampled = popm.ess(pop) < ess_threshold
        if resampled:
            idx = popm.resample(pop, resampler, dyn.stream(seed, dyn.STREAM_RESAMPLE, k))
            U1, G1 = U1[idx], G1[idx]
        U, G = U1, G1
        log_z[k + 1] = popm.log_partition_estimate(pop, 0.0)
        if on_step is not None:
            on_step(k + 1, pop, resampled)
    return pop, log_z

"""Quadrature oracles and the reduced mode-mass dynamics of the 1-D mixture.

The quadrature routines are brute-force references for models in one or two
dimensions.  The second half of the module studies learning only the
log-odds ``z`` of a 1-D mixture with frozen, well-separated means:

* ``reduced_ode_trajectory`` integrates the three limiting ODEs
  (unweighted walkers, PCD walkers, Jarzynski-weighted walkers);
* ``empirical_1d_dynamics`` simulates the coupled system of ``z``, Langevin
  walkers and (optionally) their weights with Euler-Maruyama.

Throughout this part ``q`` is the mass of the mode at ``b`` and
``p = 1 - q`` the mass of the mode at ``a``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq
from scipy.special import expit

from . import dynamics as dyn
from .energy import GaussianMixture, GmmParams, IsotropicGaussian, ZOnlyMixture, gmm_sample_target

log = logging.getLogger(__name__)

REGIMES = ("unweighted", "pcd", "jarzynski")

STREAM_EMPIRICAL = 8

# half-width of the mode intervals I_a, I_b
MODE_HALF_WIDTH = 4.0


# ---------------------------------------------------------------------------
# quadrature


@dataclass
class GridSpec:
    """Tensor grid: ``lo``/``hi`` per axis and a common spacing."""

    lo: tuple
    hi: tuple
    spacing: float

    def __post_init__(self):
        self.lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        self.hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("lo and hi need the same number of axes")
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("each axis needs hi > lo")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def axes(self):
        return [np.linspace(l, h, int(round((h - l) / self.spacing)) + 1) for l, h in zip(self.lo, self.hi)]


def _centres(model, theta):
    theta = np.asarray(theta, dtype=np.float64)
    if isinstance(model, GaussianMixture):
        a, b, _ = model.split(theta)
        return np.stack([a, b])
    if isinstance(model, ZOnlyMixture):
        return np.stack([model.a, model.b])
    if isinstance(model, IsotropicGaussian):
        return model.check_theta(theta)[None, :]
    raise ValueError(f"no default grid for model {model.name!r}; pass a GridSpec")


def default_grid(model, theta, margin=12.0, spacing=None) -> GridSpec:
    """Mode centres +- ``margin`` on every axis.

    Default spacing is 0.005 in one dimension and 0.02 in two.
    """
    c = _centres(model, theta)
    if spacing is None:
        spacing = 0.005 if model.dim == 1 else 0.02
    return GridSpec(c.min(axis=0) - margin, c.max(axis=0) + margin, spacing)


def _grid_points(model, theta, grid):
    if model.dim > 2:
        raise ValueError(f"quadrature is limited to d <= 2 (got d={model.dim})")
    grid = default_grid(model, theta) if grid is None else grid
    if grid.dim != model.dim:
        raise ValueError("grid and model dimensions differ")
    axes = grid.axes()
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return axes, pts, mesh[0].shape


def _integrate(axes, values):
    out = values
    for ax in reversed(axes):
        out = trapezoid(out, ax, axis=-1)
    return out


def quadrature_log_partition(model, theta, grid: GridSpec | None = None) -> float:
    """log of the trapezoidal integral of exp(-U_theta) over the grid."""
    axes, pts, shape = _grid_points(model, theta, grid)
    neg_u = -model.energy(theta, pts)
    m = neg_u.max()
    return float(m + np.log(_integrate(axes, np.exp(neg_u - m).reshape(shape))))


def quadrature_expectation(model, theta, observable, grid: GridSpec | None = None):
    """E_theta[observable] by the same quadrature.

    ``observable`` maps an ``(M, d)`` array of points to ``(M,)`` or ``(M, k)``.
    """
    axes, pts, shape = _grid_points(model, theta, grid)
    neg_u = -model.energy(theta, pts)
    w = np.exp(neg_u - neg_u.max()).reshape(shape)
    z = _integrate(axes, w)
    vals = np.asarray(observable(pts), dtype=np.float64)
    if vals.ndim == 1:
        return float(_integrate(axes, (vals.reshape(shape) * w)) / z)
    cols = [_integrate(axes, vals[:, j].reshape(shape) * w) for j in range(vals.shape[1])]
    return np.array(cols) / z


# ---------------------------------------------------------------------------
# reduced ODEs


def mass_b(z):
    """q = e^{-z} / (1 + e^{-z})."""
    return expit(-np.asarray(z, dtype=np.float64))


def log_odds_from_mass_b(q) -> float:
    """Inverse of ``mass_b``: the z with mass ``q`` at the mode b."""
    if not 0.0 < q < 1.0:
        raise ValueError("mass must lie strictly between 0 and 1")
    return float(math.log((1.0 - q) / q))


@dataclass
class ReducedState:
    """Initial condition of a reduced ODE.

    ``q0``: fraction of walkers near b at t = 0.  ``z_star_hat``: log-odds
    matching the fraction of data near b.
    """

    z: float
    regime: str
    q0: float
    z_star_hat: float

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; choose from {REGIMES}")
        if not 0.0 < self.q0 < 1.0:
            raise ValueError("q0 must lie strictly between 0 and 1")
        if not (math.isfinite(self.z) and math.isfinite(self.z_star_hat)):
            raise ValueError("z and z_star_hat must be finite")

    @property
    def q_star_hat(self) -> float:
        return float(mass_b(self.z_star_hat))


def reduced_field(state: ReducedState, z: float) -> float:
    """Right-hand side dz/dt of the reduced ODE at ``z``."""
    if state.regime == "pcd":
        return 0.0
    if state.regime == "unweighted":
        return state.q0 - state.q_star_hat
    p0, q0 = 1.0 - state.q0, state.q0
    # q0 e^{-z} / (p0 + q0 e^{-z}), written to avoid overflow
    walker_mass = expit(math.log(q0 / p0) - z)
    return float(walker_mass) - state.q_star_hat


def reduced_ode_trajectory(state: ReducedState, step: float, T: float) -> np.ndarray:
    """Forward-Euler path ``z(0), z(step), ..., z(T)``."""
    if not step > 0:
        raise ValueError("step must be positive")
    if T < 0:
        raise ValueError("T must be non-negative")
    n = int(round(T / step))
    out = np.empty(n + 1)
    z = out[0] = state.z
    if state.regime == "pcd":
        out[:] = z
        return out
    if state.regime == "unweighted":
        out[:] = z + step * (state.q0 - state.q_star_hat) * np.arange(n + 1)
        return out
    lr = math.log(state.q0 / (1.0 - state.q0))
    q_star = state.q_star_hat
    for i in range(1, n + 1):
        u = lr - z
        walker_mass = 1.0 / (1.0 + math.exp(-u)) if u >= 0 else math.exp(u) / (1.0 + math.exp(u))
        z = z + step * (walker_mass - q_star)
        out[i] = z
    return out


def jarzynski_fixed_point(q0: float, z_star_hat: float) -> float:
    """Closed-form stable point ``z_star_hat + log(q0 / p0)``."""
    return z_star_hat + math.log(q0 / (1.0 - q0))


def reduced_fixed_point(state: ReducedState, bracket=50.0) -> float:
    """Root of the weighted-regime field found numerically with brentq."""
    if state.regime != "jarzynski":
        raise ValueError(f"the {state.regime} regime has no isolated fixed point")
    c = jarzynski_fixed_point(state.q0, state.z_star_hat)
    return brentq(lambda z: reduced_field(state, z), c - bracket, c + bracket, xtol=1e-14, rtol=1e-14)


# ---------------------------------------------------------------------------
# empirical 1-D dynamics


@dataclass
class EmpiricalConfig:
    regime: str = "jarzynski"
    n_walkers: int = 200
    alpha: float = 1.0
    dt: float = 0.01
    T: float = 1e4
    a: float = -5.0
    b: float = 5.0
    z_star: float = -math.log(3.0)
    z0: float = 0.0
    seed: int = 0
    record_every: int = 100

    def validate(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; choose from {REGIMES}")
        if self.n_walkers < 1:
            raise ValueError("need at least one walker")
        if not (self.alpha > 0 and self.dt > 0 and self.T >= 0):
            raise ValueError("alpha and dt must be positive and T non-negative")
        if abs(self.a - self.b) < 10.0:
            raise ValueError("the modes must be at least 10 apart")
        if self.record_every < 1:
            raise ValueError("record_every must be positive")


@dataclass
class EmpiricalResult:
    t: np.ndarray
    z: np.ndarray
    q: np.ndarray  # model mass of the mode at b
    walker_q: np.ndarray  # (weighted) fraction of walkers in I_b
    q0_hat: float
    q_star_hat: float
    positions: np.ndarray
    log_weights: np.ndarray
    start_near_b: np.ndarray
    hops: list = field(default_factory=list)  # (time, walker) pairs

    @property
    def z_star_hat(self) -> float:
        return log_odds_from_mass_b(self.q_star_hat)

    def reduced_state(self, regime=None) -> ReducedState:
        return ReducedState(float(self.z[0]), regime or "jarzynski", self.q0_hat, self.z_star_hat)


def _in_interval(x, centre):
    return np.abs(x - centre) <= MODE_HALF_WIDTH


def empirical_1d_dynamics(config: EmpiricalConfig) -> EmpiricalResult:
    """Euler-Maruyama simulation of the z-learning system with N = n walkers.

    dz/dt = sum_i w_i dU/dz(X_i) - mean_j dU/dz(x*_j),
    dX = -alpha grad U dt + sqrt(2 alpha) dW,
    dA/dt = -dU/dz(X) dz/dt   (jarzynski regime only; A = 0 otherwise).

    Walkers start from rho_{z0} (unweighted, jarzynski) or at the data (pcd).
    """
    config.validate()
    c = config
    n = c.n_walkers
    a, b = float(c.a), float(c.b)
    slope, offset = b - a, 0.5 * (a * a - b * b)
    mid = 0.5 * (a + b)

    data = gmm_sample_target(GmmParams([a], [b], c.z_star), n, dyn.stream(c.seed, dyn.STREAM_TEACHER))[:, 0]
    if c.regime == "pcd":
        x = data.copy()
    else:
        x = gmm_sample_target(GmmParams([a], [b], c.z0), n, dyn.stream(c.seed, dyn.STREAM_INIT))[:, 0]
    A = np.zeros(n)
    weighted = c.regime == "jarzynski"
    q0_hat = float(np.mean(_in_interval(x, b)))
    q_star_hat = float(np.mean(_in_interval(data, b)))
    if not 0.0 < q_star_hat < 1.0:
        raise ValueError("the data must populate both modes")
    start_near_b = _in_interval(x, b)

    # dU/dz = r_b = expit((b - a) x + (a^2 - b^2)/2 - z)
    data_u = slope * data + offset
    n_steps = int(round(c.T / c.dt))
    drift, diff = c.alpha * c.dt, math.sqrt(2.0 * c.alpha * c.dt)
    z = float(c.z0)
    side = x > mid
    hops = []

    n_rec = n_steps // c.record_every + 1
    t_rec, z_rec, wq_rec = np.empty(n_rec), np.empty(n_rec), np.empty(n_rec)

    def walker_q():
        near = _in_interval(x, b)
        if not weighted:
            return float(np.mean(near))
        w = np.exp(A - A.max())
        return float(np.sum(w * near) / np.sum(w))

    t_rec[0], z_rec[0], wq_rec[0] = 0.0, z, walker_q()
    block = 2000
    rec = 1
    for start in range(0, n_steps, block):
        steps = min(block, n_steps - start)
        noise = dyn.stream(c.seed, STREAM_EMPIRICAL, start // block).standard_normal((steps, n))
        for j in range(steps):
            rb = expit(slope * x + offset - z)
            if weighted:
                w = np.exp(A - A.max())
                walker_term = np.sum(w * rb) / np.sum(w)
            else:
                walker_term = np.sum(rb) / n
            zdot = walker_term - np.sum(expit(data_u - z)) / n
            grad = x - a - rb * slope
            x = x - drift * grad + diff * noise[j]
            if weighted:
                A = A - rb * (c.dt * zdot)
            z = z + c.dt * zdot
            step = start + j + 1
            new_side = x > mid
            if np.any(new_side != side):
                for i in np.flatnonzero(new_side != side):
                    hops.append((step * c.dt, int(i)))
                    log.debug("walker %d crossed the midpoint at t=%.2f", i, step * c.dt)
                side = new_side
            if step % c.record_every == 0:
                t_rec[rec], z_rec[rec], wq_rec[rec] = step * c.dt, z, walker_q()
                rec += 1
        dyn.check_finite(x, "position")
        if not math.isfinite(z):
            raise dyn.NumericalBlowup("log-odds z became non-finite")
    if hops:
        log.info("%d midpoint crossings in the %s regime", len(hops), c.regime)

    return EmpiricalResult(
        t=t_rec[:rec],
        z=z_rec[:rec],
        q=mass_b(z_rec[:rec]),
        walker_q=wq_rec[:rec],
        q0_hat=q0_hat,
        q_star_hat=q_star_hat,
        positions=x,
        log_weights=A,
        start_near_b=start_near_b,
        hops=hops,
    )


def classify_mass_path(q, q_star, settle_tol=0.05, collapse_tol=0.05, bias_tol=0.1):
    """Label a mass trajectory as ``settle``, ``collapse``, ``freeze`` or ``other``.

    settle: the final mass is within ``settle_tol`` of the target.
    collapse: the mass comes within ``collapse_tol`` of 0 or 1 at some time.
    freeze: the final mass is further than ``bias_tol`` from the target.
    """
    q = np.asarray(q, dtype=np.float64)
    if np.min(np.minimum(q, 1.0 - q)) < collapse_tol:
        return "collapse"
    if abs(q[-1] - q_star) < settle_tol:
        return "settle"
    if abs(q[-1] - q_star) > bias_tol:
        return "freeze"
    return "other"

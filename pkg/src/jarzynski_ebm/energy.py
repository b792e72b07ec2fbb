"""Energy models with closed-form partition functions.

Every model works on a flat parameter vector ``theta`` and on batches of
points ``x`` of shape ``(N, d)``; a single point of shape ``(d,)`` is also
accepted and the result is squeezed back.  Parameter gradients come back
flattened in the model's fixed block ordering (see ``param_blocks``).

Registered names: ``"gmm"``, ``"gaussian"``, ``"gmm1d-z"``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


def _as_batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x, single


def _squeeze(single, *arrays):
    if not single:
        return arrays if len(arrays) > 1 else arrays[0]
    out = tuple(a[0] for a in arrays)
    return out if len(out) > 1 else out[0]


@dataclass
class GmmParams:
    """Two-mode mixture parameters: means ``a``, ``b`` and log-odds ``z``.

    The mass of the mode centred at ``a`` is ``p = 1 / (1 + exp(-z))``.
    """

    a: np.ndarray
    b: np.ndarray
    z: float

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        self.z = float(self.z)
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise ValueError("a and b must be vectors of the same length")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b)) and np.isfinite(self.z)):
            raise ValueError("GMM parameters must be finite")

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    @property
    def mass(self) -> float:
        """Probability mass of the mode at ``a``."""
        return float(mode_mass(self.z))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, [self.z]])

    @classmethod
    def from_vector(cls, theta) -> "GmmParams":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.ndim != 1 or theta.shape[0] % 2 != 1:
            raise ValueError("GMM parameter vector must have length 2d+1")
        d = (theta.shape[0] - 1) // 2
        return cls(theta[:d].copy(), theta[d : 2 * d].copy(), theta[-1])


def mode_mass(z):
    """p = 1/(1+e^{-z}), evaluated without overflow."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def _gmm_terms(a, b, z, x):
    """Log-terms of the two modes and the responsibilities."""
    da = x - a
    db = x - b
    la = -0.5 * np.sum(da * da, axis=1)
    lb = -0.5 * np.sum(db * db, axis=1) - z
    m = np.maximum(la, lb)
    ea = np.exp(la - m)
    eb = np.exp(lb - m)
    s = ea + eb
    energy = -(m + np.log(s))
    return energy, ea / s, eb / s, da, db


def gmm_energy(params: GmmParams, x):
    """U(x) = -log(exp(-|x-a|^2/2) + exp(-|x-b|^2/2 - z))."""
    xb, single = _as_batch(x, params.dim)
    energy = _gmm_terms(params.a, params.b, params.z, xb)[0]
    return float(energy[0]) if single else energy


def gmm_responsibilities(params: GmmParams, x):
    """Softmax weights ``(r_a, r_b)`` of the two modes at ``x``."""
    xb, single = _as_batch(x, params.dim)
    _, ra, rb, _, _ = _gmm_terms(params.a, params.b, params.z, xb)
    return _squeeze(single, ra, rb)


def gmm_grad_theta(params: GmmParams, x):
    """Flattened (dU/da, dU/db, dU/dz) = (-r_a (x-a), -r_b (x-b), r_b)."""
    xb, single = _as_batch(x, params.dim)
    _, ra, rb, da, db = _gmm_terms(params.a, params.b, params.z, xb)
    g = np.concatenate([-ra[:, None] * da, -rb[:, None] * db, rb[:, None]], axis=1)
    return g[0] if single else g


def gmm_log_partition(params: GmmParams) -> float:
    """log Z = (d/2) log(2 pi) + log(1 + e^{-z}); independent of the means."""
    return 0.5 * params.dim * LOG_2PI + float(np.logaddexp(0.0, -params.z))


def gmm_sample_target(params: GmmParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points: Bernoulli mode choice, then a unit Gaussian."""
    if n < 1:
        raise ValueError("n must be at least 1")
    at_a = rng.random(n) < params.mass
    noise = rng.standard_normal((n, params.dim))
    centres = np.where(at_a[:, None], params.a[None, :], params.b[None, :])
    return centres + noise


class EnergyModel:
    """Base class for U_theta(x).

    Subclasses implement ``evaluate`` which returns energy, space gradient
    and parameter gradient together (they share intermediate terms).  All
    operations are pure functions of their arguments.
    """

    name = "base"
    dim: int
    n_params: int

    def evaluate(self, theta, x):
        raise NotImplementedError

    def energy(self, theta, x):
        xb, single = _as_batch(x, self.dim)
        u = self.evaluate(theta, xb)[0]
        return float(u[0]) if single else u

    def grad_x(self, theta, x):
        xb, single = _as_batch(x, self.dim)
        g = self.evaluate(theta, xb)[1]
        return g[0] if single else g

    def grad_theta(self, theta, x):
        xb, single = _as_batch(x, self.dim)
        g = self.evaluate(theta, xb)[2]
        return g[0] if single else g

    def log_partition(self, theta):
        """Exact log Z_theta, or None when unavailable."""
        return None

    def sample(self, theta, n, rng):
        """Exact draws from rho_theta."""
        raise NotImplementedError(f"{self.name} has no exact sampler")

    def hessian_bound(self, theta) -> float:
        """An upper bound on the operator norm of the Hessian in x."""
        raise NotImplementedError

    def param_blocks(self) -> dict[str, slice]:
        return {"theta": slice(0, self.n_params)}

    def check_theta(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"{self.name}: expected {self.n_params} parameters, got shape {theta.shape}")
        return theta


class GaussianMixture(EnergyModel):
    """Two-mode unit-variance mixture; theta = (a, b, z)."""

    name = "gmm"

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.n_params = 2 * dim + 1

    def split(self, theta):
        theta = self.check_theta(theta)
        d = self.dim
        return theta[:d], theta[d : 2 * d], theta[-1]

    def params(self, theta) -> GmmParams:
        return GmmParams.from_vector(self.check_theta(theta))

    def evaluate(self, theta, x):
        a, b, z = self.split(theta)
        energy, ra, rb, da, db = _gmm_terms(a, b, z, x)
        gx = ra[:, None] * da + rb[:, None] * db
        gt = np.concatenate([-ra[:, None] * da, -rb[:, None] * db, rb[:, None]], axis=1)
        return energy, gx, gt

    def log_partition(self, theta):
        _, _, z = self.split(theta)
        return 0.5 * self.dim * LOG_2PI + float(np.logaddexp(0.0, -z))

    def sample(self, theta, n, rng):
        return gmm_sample_target(self.params(theta), n, rng)

    def hessian_bound(self, theta):
        # Hessian = I - r_a r_b (a-b)(a-b)^T, and r_a r_b <= 1/4.
        a, b, _ = self.split(theta)
        return 1.0 + 0.25 * float(np.sum((a - b) ** 2))

    def param_blocks(self):
        d = self.dim
        return {"a": slice(0, d), "b": slice(d, 2 * d), "z": slice(2 * d, 2 * d + 1)}

    def mass(self, theta) -> float:
        return float(mode_mass(self.split(theta)[2]))


class IsotropicGaussian(EnergyModel):
    """U(x) = |x - mu|^2 / 2 with theta = mu.  Z does not depend on mu."""

    name = "gaussian"

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.n_params = dim

    def evaluate(self, theta, x):
        mu = self.check_theta(theta)
        dx = x - mu
        return 0.5 * np.sum(dx * dx, axis=1), dx, -dx

    def log_partition(self, theta):
        return 0.5 * self.dim * LOG_2PI

    def sample(self, theta, n, rng):
        mu = self.check_theta(theta)
        return mu + rng.standard_normal((n, self.dim))

    def hessian_bound(self, theta):
        return 1.0

    def param_blocks(self):
        return {"mu": slice(0, self.dim)}


class ZOnlyMixture(EnergyModel):
    """The two-mode mixture with frozen means; theta = (z,)."""

    name = "gmm1d-z"

    def __init__(self, a, b):
        self.a = np.atleast_1d(np.asarray(a, dtype=np.float64))
        self.b = np.atleast_1d(np.asarray(b, dtype=np.float64))
        if self.a.shape != self.b.shape:
            raise ValueError("a and b must have the same shape")
        self.dim = self.a.shape[0]
        self.n_params = 1

    def evaluate(self, theta, x):
        (z,) = self.check_theta(theta)
        energy, ra, rb, da, db = _gmm_terms(self.a, self.b, z, x)
        gx = ra[:, None] * da + rb[:, None] * db
        return energy, gx, rb[:, None]

    def log_partition(self, theta):
        (z,) = self.check_theta(theta)
        return 0.5 * self.dim * LOG_2PI + float(np.logaddexp(0.0, -z))

    def sample(self, theta, n, rng):
        (z,) = self.check_theta(theta)
        return gmm_sample_target(GmmParams(self.a, self.b, z), n, rng)

    def hessian_bound(self, theta):
        return 1.0 + 0.25 * float(np.sum((self.a - self.b) ** 2))

    def param_blocks(self):
        return {"z": slice(0, 1)}

    def mass(self, theta) -> float:
        return float(mode_mass(theta[0]))


def make_model(name: str, dim: int = 1, **kwargs) -> EnergyModel:
    """Build a registered model by name."""
    if name == "gmm":
        return GaussianMixture(dim)
    if name == "gaussian":
        return IsotropicGaussian(dim)
    if name == "gmm1d-z":
        a = kwargs.get("a", np.zeros(dim))
        b = kwargs.get("b", np.full(dim, 10.0))
        return ZOnlyMixture(a, b)
    raise ValueError(f"unknown model {name!r}; choose from {sorted(MODEL_NAMES)}")


MODEL_NAMES = ("gmm", "gaussian", "gmm1d-z")

"""Multinomial, stratified and systematic ancestor selection.

Each scheme draws points ``u_1..u_N`` in (0, 1] and picks ancestor ``m`` for
draw ``u`` when ``P[m-1] < u <= P[m]``, with ``P`` the cumulative weights.
Indices are 0-based.  Every scheme takes an optional ``u`` override so the
selection can be checked against hand traces.
"""

import numpy as np

SCHEMES = ("multinomial", "stratified", "systematic")
DEFAULT_SCHEME = "systematic"


def cumulative_sum(p):
    """Cumulative weights with the final value pinned to exactly 1."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(p < 0):
        raise ValueError("weights must be non-negative")
    total = p.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1 (got {total!r})")
    P = np.cumsum(p)
    # pin from the last positive weight on, so that round-off can never
    # route a draw to trailing zero-weight entries
    P[np.flatnonzero(p > 0)[-1] :] = 1.0
    return P


def _invert(P, u):
    # side="left" gives the first m with u <= P[m]
    return np.minimum(np.searchsorted(P, u, side="left"), P.size - 1)


def _open_left_uniform(rng, size=None):
    return 1.0 - rng.random(size)


def multinomial_select(p, rng=None, u=None):
    P = cumulative_sum(p)
    if u is None:
        u = _open_left_uniform(rng, P.size)
    return _invert(P, np.asarray(u, dtype=np.float64))


def stratified_select(p, rng=None, u=None):
    """One uniform draw in each stratum ((n-1)/N, n/N]."""
    P = cumulative_sum(p)
    N = P.size
    if u is None:
        u = (np.arange(N) + _open_left_uniform(rng, N)) / N
    return _invert(P, np.asarray(u, dtype=np.float64))


def systematic_select(p, rng=None, u1=None):
    """A single draw ``u1`` in (0, 1/N], then the evenly spaced comb ``u1 + n/N``."""
    P = cumulative_sum(p)
    N = P.size
    if u1 is None:
        u1 = _open_left_uniform(rng) / N
    u = u1 + np.arange(N) / N
    return _invert(P, u)


def select(scheme, p, rng):
    if scheme == "multinomial":
        return multinomial_select(p, rng)
    if scheme == "stratified":
        return stratified_select(p, rng)
    if scheme == "systematic":
        return systematic_select(p, rng)
    raise ValueError(f"unknown resampling scheme {scheme!r}; choose from {SCHEMES}")

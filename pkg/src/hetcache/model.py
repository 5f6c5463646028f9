"""Domain types shared by every other module.

Probability vectors (popularity profiles and caching strategies) are dense
float64 arrays indexed from 0; file ``i`` in the array is file ``i + 1`` in
the text interchange format.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Optional

import numpy as np

SIMPLEX_ATOL = 1e-12


class ConfigError(ValueError):
    """A configuration field violates its invariant."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class InsufficientDataError(ValueError):
    """An estimator received no samples for a side it needs."""


class ParameterDomainError(ValueError):
    """Free parameters of a bound fall outside their admissible region."""


@dataclass(frozen=True)
class NetworkConfig:
    """Scalar system parameters.

    ``lambda_b`` is carried for completeness; no formula reads it.
    """

    lambda_u: float = 1e-3
    lambda_s: float = 1e-5
    lambda_b: float = 1e-6
    lambda_r: float = 1.0 / 360.0
    B: float = 1e7
    R0: float = 1e6
    gamma: float = 100.0
    R: float = 2000.0
    M: int = 1
    N: int = 10

    @property
    def backhaul_time(self) -> float:
        """Seconds to ship one file over the BS link, ``B / R0``."""
        return self.B / self.R0

    @property
    def mean_sbs_in_range(self) -> float:
        """Expected number of SBSs within ``gamma`` of a user."""
        return self.lambda_s * math.pi * self.gamma**2

    @property
    def mean_users_in_cell(self) -> float:
        return self.lambda_u * math.pi * self.R**2

    def with_(self, **changes) -> "NetworkConfig":
        return replace(self, **changes)


_POSITIVE_FIELDS = ("lambda_u", "lambda_s", "lambda_b", "lambda_r", "B", "R0", "gamma", "R")


def validate(config: NetworkConfig) -> NetworkConfig:
    """Return ``config`` unchanged, or raise ``ConfigError`` naming the first bad field."""
    for f in fields(config):
        value = getattr(config, f.name)
        if not isinstance(value, (int, float, np.integer, np.floating)) or isinstance(value, bool):
            raise ConfigError(f.name, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f.name, "must be finite")
        if f.name in _POSITIVE_FIELDS and value <= 0:
            raise ConfigError(f.name, f"must be > 0, got {value}")
    for name in ("M", "N"):
        value = getattr(config, name)
        if int(value) != value or value < 1:
            raise ConfigError(name, f"must be an integer >= 1, got {value}")
    return config


def _as_simplex_vector(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{what} must have at least one entry")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise ValueError(f"{what} entries must lie in [0, 1]")
    total = arr.sum()
    if abs(total - 1.0) > SIMPLEX_ATOL * max(1, arr.size):
        raise ValueError(f"{what} must sum to 1, sums to {total!r}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PopularityProfile:
    """Request distribution over the ``N`` files of the catalog."""

    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _as_simplex_vector(self.p, "popularity profile"))

    @property
    def N(self) -> int:
        return self.p.size

    def __len__(self) -> int:
        return self.p.size

    def __eq__(self, other):
        return isinstance(other, PopularityProfile) and np.array_equal(self.p, other.p)

    @classmethod
    def from_weights(cls, weights) -> "PopularityProfile":
        w = np.asarray(weights, dtype=np.float64)
        return cls(w / w.sum())

    @classmethod
    def point_mass(cls, N: int, index: int) -> "PopularityProfile":
        p = np.zeros(N)
        p[index] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, N: int) -> "PopularityProfile":
        return cls(np.full(N, 1.0 / N))


@dataclass(frozen=True, eq=False)
class CachingStrategy:
    """Per-slot caching distribution; each SBS fills ``M`` slots i.i.d. from ``pi``."""

    pi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi", _as_simplex_vector(self.pi, "caching strategy"))

    @property
    def N(self) -> int:
        return self.pi.size

    def __len__(self) -> int:
        return self.pi.size

    def __eq__(self, other):
        return isinstance(other, CachingStrategy) and np.array_equal(self.pi, other.pi)

    @classmethod
    def uniform(cls, N: int) -> "CachingStrategy":
        return cls(np.full(N, 1.0 / N))

    @classmethod
    def point_mass(cls, N: int, index: int) -> "CachingStrategy":
        pi = np.zeros(N)
        pi[index] = 1.0
        return cls(pi)


def zipf_profile(N: int, theta: float) -> PopularityProfile:
    """Zipf law over ranks ``1..N``: ``p_i`` proportional to ``i**-theta``."""
    if int(N) != N or N < 1:
        raise ValueError(f"N must be an integer >= 1, got {N}")
    ranks = np.arange(1, int(N) + 1, dtype=np.float64)
    # log-space keeps large exponents from underflowing to an all-zero vector
    logw = -float(theta) * np.log(ranks)
    w = np.exp(logw - logw.max())
    return PopularityProfile(w / w.sum())


@dataclass(frozen=True)
class ParametricFamily:
    """A popularity family indexed by ``theta`` in the box ``[a, b]**d``.

    ``profile_of`` maps a length-``d`` parameter to a profile.
    ``per_sample_estimator`` maps an integer array of observed file indices
    to an ``(n, d)`` array of single-sample parameter estimates; its output
    is clamped to the box by ``estimate_one``.  Both may be left out when
    only the training-time bounds are needed, which read ``d, a, b, C``.
    """

    d: int
    a: float
    b: float
    C: float
    profile_of: Optional[Callable[[np.ndarray], PopularityProfile]] = field(default=None, repr=False)
    per_sample_estimator: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    N: int = 0
    name: str = "custom"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if not self.a < self.b:
            raise ValueError(f"need a < b, got a={self.a}, b={self.b}")
        if not self.C > 0:
            raise ValueError(f"C must be > 0, got {self.C}")

    @property
    def width(self) -> float:
        return self.b - self.a

    def estimate_one(self, file_indices) -> np.ndarray:
        if self.per_sample_estimator is None:
            raise ValueError(f"family {self.name!r} has no single-sample estimator")
        idx = np.asarray(file_indices, dtype=np.int64).reshape(-1)
        est = np.asarray(self.per_sample_estimator(idx), dtype=np.float64).reshape(idx.size, self.d)
        return np.clip(est, self.a, self.b)


def derivative_norm_bound(
    profile_of: Callable[[np.ndarray], PopularityProfile],
    d: int,
    a: float,
    b: float,
    grid: int = 41,
    h: float = 1e-6,
    safety: float = 1.1,
) -> float:
    """Numerical ``C``: max over a parameter grid of ``sum_i ||d p_i / d theta||_2``.

    Central differences on a product grid (``grid`` points per axis, capped
    so the grid stays small for ``d > 2``), inflated by ``safety``.
    """
    per_axis = grid if d <= 2 else max(3, int(round(2000 ** (1.0 / d))))
    axis = np.linspace(a + h, b - h, per_axis)
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    best = 0.0
    for theta in mesh:
        grads = []
        for k in range(d):
            step = np.zeros(d)
            step[k] = h
            hi = profile_of(theta + step).p
            lo = profile_of(theta - step).p
            grads.append((hi - lo) / (2 * h))
        g = np.stack(grads, axis=1)
        best = max(best, float(np.linalg.norm(g, axis=1).sum()))
    return safety * best


def affine_family(u, V, a: float, b: float, C: float | None = None) -> ParametricFamily:
    """Family ``p(theta) = u + V @ theta`` with an exactly unbiased linear estimator.

    The single-sample estimator is ``f(i) = W[i]`` where ``W`` solves
    ``u @ W = 0`` and ``V.T @ W = I`` (minimum-norm solution), so that
    ``E_theta f(X) = theta`` for every ``theta``.  Raises if the family
    leaves the simplex on the box or if ``W`` falls outside ``[a, b]``.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    V = np.asarray(V, dtype=np.float64)
    if V.ndim == 1:
        V = V[:, None]
    N, d = V.shape
    if u.size != N:
        raise ValueError("u and V disagree on N")
    if abs(u.sum() - 1) > 1e-12 or np.any(np.abs(V.sum(axis=0)) > 1e-12):
        raise ValueError("need sum(u) = 1 and every column of V summing to 0")
    corners = np.array(np.meshgrid(*([[a, b]] * d), indexing="ij")).reshape(d, -1).T
    if np.any(u[None, :] + corners @ V.T < -1e-15):
        raise ValueError("family leaves the simplex inside the parameter box")

    A = np.vstack([u[None, :], V.T])  # (d+1, N)
    rhs = np.vstack([np.zeros((1, d)), np.eye(d)])
    W, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    if not np.allclose(A @ W, rhs, atol=1e-10):
        raise ValueError("no linear unbiased estimator exists for this family")
    if np.any(W < a - 1e-12) or np.any(W > b + 1e-12):
        raise ValueError("linear unbiased estimator is not bounded by [a, b]")
    W = np.clip(W, a, b)

    def profile_of(theta) -> PopularityProfile:
        t = np.asarray(theta, dtype=np.float64).reshape(d)
        p = np.clip(u + V @ t, 0.0, None)
        return PopularityProfile(p / p.sum())

    def estimator(idx: np.ndarray) -> np.ndarray:
        return W[idx]

    if C is None:
        # exact for an affine map: sum_i ||V[i]||_2
        C = 1.1 * float(np.linalg.norm(V, axis=1).sum())
    return ParametricFamily(d, a, b, C, profile_of, estimator, N=N, name="affine")


def mixture_family(q0, q1, a: float, b: float) -> ParametricFamily:
    """Scalar family sliding from ``q0`` at ``theta=a`` to ``q1`` at ``theta=b``.

    ``q0`` and ``q1`` must have disjoint supports.  The estimator reports
    ``a`` for a request in the support of ``q0`` and ``b`` otherwise, which
    is unbiased and bounded by construction.
    """
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    if np.any((q0 > 0) & (q1 > 0)):
        raise ValueError("q0 and q1 must have disjoint supports")
    q0 = PopularityProfile(q0).p
    q1 = PopularityProfile(q1).p
    width = b - a
    u = (b * q0 - a * q1) / width
    v = (q1 - q0) / width
    W = np.where(q1 > 0, b, a).astype(np.float64)

    def profile_of(theta) -> PopularityProfile:
        t = float(np.asarray(theta, dtype=np.float64).reshape(-1)[0])
        p = np.clip(u + t * v, 0.0, None)
        return PopularityProfile(p / p.sum())

    def estimator(idx: np.ndarray) -> np.ndarray:
        return W[idx][:, None]

    C = 1.1 * float(np.abs(v).sum())
    return ParametricFamily(1, a, b, C, profile_of, estimator, N=q0.size, name="mixture")


def zipf_family(N: int, a: float = 0.5, b: float = 1.0, C: float | None = None) -> ParametricFamily:
    """Zipf family with a clamped one-sample method-of-moments estimator.

    The estimator matches ``log X`` to ``E_theta[log X]``; it is only
    approximately unbiased and is meant for demonstrations.
    """
    from scipy.optimize import brentq

    logr = np.log(np.arange(1, N + 1, dtype=np.float64))

    def mean_log_rank(theta: float) -> float:
        return float(zipf_profile(N, theta).p @ logr)

    hi_val, lo_val = mean_log_rank(a), mean_log_rank(b)
    table = np.empty(N)
    for i in range(N):
        target = logr[i]
        if target >= hi_val:
            table[i] = a
        elif target <= lo_val:
            table[i] = b
        else:
            table[i] = brentq(lambda t: mean_log_rank(t) - target, a, b, xtol=1e-12)

    def profile_of(theta) -> PopularityProfile:
        return zipf_profile(N, float(np.asarray(theta).reshape(-1)[0]))

    def estimator(idx: np.ndarray) -> np.ndarray:
        return table[idx][:, None]

    if C is None:
        C = derivative_norm_bound(profile_of, 1, a, b)
    return ParametricFamily(1, a, b, C, profile_of, estimator, N=N, name="zipf")

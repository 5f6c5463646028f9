"""Closed-form offloading loss and caching-strategy optimization.

The miss factor for a file cached with per-slot probability ``x`` is

    g(x) = exp(-lambda_s * pi * gamma**2 * (1 - (1 - x)**M))

and the average offloading loss is ``(B / R0) * sum_i p_i g(pi_i)``.
``g`` is a convex non-increasing function composed with a concave one, so
the objective is convex on the simplex; multi-start projected gradient
descent is used anyway so that a bad start cannot hide a bug.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .model import CachingStrategy, NetworkConfig, PopularityProfile

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerOptions:
    restarts: int = 4
    max_iters: int = 5000
    step_init: float = 1.0
    tol: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class CachingSolution:
    strategy: CachingStrategy
    loss: float
    converged: bool = True
    iterations: int = 0

    def __iter__(self):
        # unpack as (strategy, loss)
        yield self.strategy
        yield self.loss


def miss_factor(x, config: NetworkConfig) -> np.ndarray:
    """``g(x)``: probability that no SBS in range holds a file cached with probability ``x``."""
    x = np.asarray(x, dtype=np.float64)
    c = config.mean_sbs_in_range
    # 1 - (1 - x)**M, written to stay accurate for tiny x
    with np.errstate(divide="ignore"):
        held = -np.expm1(config.M * np.log1p(-np.minimum(x, 1.0)))
    return np.exp(-c * held)


def _miss_factor_slope(x: np.ndarray, config: NetworkConfig) -> np.ndarray:
    c = config.mean_sbs_in_range
    M = config.M
    return miss_factor(x, config) * (-c * M * np.power(1.0 - x, M - 1))


def _check_lengths(config: NetworkConfig, *vectors: np.ndarray) -> None:
    for v in vectors:
        if v.size != config.N:
            raise ValueError(f"dimension mismatch: expected N={config.N}, got {v.size}")


def offloading_loss(config: NetworkConfig, strategy: CachingStrategy, profile: PopularityProfile) -> float:
    """Average backhaul time (seconds) per request for the typical user."""
    pi = strategy.pi
    p = profile.p
    _check_lengths(config, pi, p)
    return float(config.backhaul_time * np.dot(miss_factor(pi, config), p))


def offloading_loss_gradient(config: NetworkConfig, pi, profile: PopularityProfile) -> np.ndarray:
    """Gradient of ``offloading_loss`` with respect to the strategy vector."""
    pi = np.asarray(pi, dtype=np.float64)
    _check_lengths(config, pi, profile.p)
    return config.backhaul_time * profile.p * _miss_factor_slope(pi, config)


def loss_floor(config: NetworkConfig) -> float:
    """Smallest achievable loss, ``(B / R0) * exp(-lambda_s * pi * gamma**2)``."""
    return config.backhaul_time * math.exp(-config.mean_sbs_in_range)


def epsilon_from_fraction(config: NetworkConfig, fraction: float) -> float:
    """Accuracy target in seconds expressed as a fraction of ``loss_floor``."""
    if not fraction > 0:
        raise ValueError(f"fraction must be > 0, got {fraction}")
    return fraction * loss_floor(config)


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, n + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    shift = css[rho] / (rho + 1)
    return np.maximum(y - shift, 0.0)


def _descend(x, objective, gradient, opts: OptimizerOptions):
    """Projected gradient descent with backtracking; returns (x, f, converged, iters)."""
    fx = objective(x)
    step = opts.step_init
    for it in range(1, opts.max_iters + 1):
        grad = gradient(x)
        scale = np.max(np.abs(grad))
        if scale == 0.0:
            return x, fx, True, it
        t = step / scale
        while True:
            x_new = project_simplex(x - t * grad)
            diff = x_new - x
            f_new = objective(x_new)
            # sufficient decrease for a projected step
            if f_new <= fx + grad @ diff + (diff @ diff) / (2 * t) + 1e-300:
                break
            t *= 0.5
            if t * scale < 1e-20:
                return x, fx, True, it
        step = min(t * scale * 2.0, 1e6)
        moved = np.max(np.abs(diff))
        x, fx = x_new, f_new
        if moved < opts.tol:
            return x, fx, True, it
    return x, fx, False, opts.max_iters


def optimize_caching(
    config: NetworkConfig,
    profile: PopularityProfile,
    opts: OptimizerOptions | None = None,
) -> CachingSolution:
    """Minimize the offloading loss over the simplex.

    Files with zero popularity are pinned at zero caching probability.
    Starts: uniform over the remaining files, point masses on the most
    popular ones, and ``opts.restarts`` Dirichlet draws.  The start with
    the lowest final loss wins; ties go to the earlier start.
    """
    opts = opts or OptimizerOptions()
    p_full = profile.p
    _check_lengths(config, p_full)
    support = np.flatnonzero(p_full > 0)
    n = support.size
    p = p_full[support]
    sub = config.with_(N=n)
    sub_profile = p  # raw vector; avoids re-normalisation drift

    def objective(x):
        return float(np.dot(miss_factor(x, sub), sub_profile))

    def gradient(x):
        return sub_profile * _miss_factor_slope(x, sub)

    rng = np.random.default_rng(opts.seed)
    starts = [np.full(n, 1.0 / n)]
    for i in np.argsort(-p, kind="stable")[: min(n, opts.restarts)]:
        e = np.zeros(n)
        e[i] = 1.0
        starts.append(e)
    starts.extend(rng.dirichlet(np.ones(n), size=opts.restarts))

    best = None
    for x0 in starts:
        x, fx, ok, iters = _descend(x0, objective, gradient, opts)
        if best is None or fx < best[1]:
            best = (x, fx, ok, iters)
    x, fx, ok, iters = best
    if not ok:
        log.warning("optimize_caching hit max_iters=%d; returning best iterate", opts.max_iters)

    pi = np.zeros(p_full.size)
    pi[support] = x
    pi /= pi.sum()
    strategy = CachingStrategy(pi)
    return CachingSolution(strategy, offloading_loss(config, strategy, profile), ok, iters)


def simplex_grid(N: int, grid_step: float) -> np.ndarray:
    """All points of the simplex whose coordinates are multiples of ``grid_step``, lexicographically sorted."""
    K = round(1.0 / grid_step)
    if K < 1 or abs(K * grid_step - 1.0) > 1e-9:
        raise ValueError(f"grid_step must divide 1, got {grid_step}")
    if N == 1:
        return np.ones((1, 1))
    # stars and bars: bar positions -> part sizes
    bars = np.array(list(itertools.combinations(range(K + N - 1), N - 1)), dtype=np.int64)
    edges = np.hstack([np.full((bars.shape[0], 1), -1), bars, np.full((bars.shape[0], 1), K + N - 1)])
    parts = np.diff(edges, axis=1) - 1
    order = np.lexsort(parts.T[::-1])
    return parts[order] / K


def brute_force_caching(
    config: NetworkConfig,
    profile: PopularityProfile,
    grid_step: float = 0.01,
    max_n: int = 4,
) -> CachingSolution:
    """Exhaustive minimum of the offloading loss over a simplex grid.

    Ties are broken towards the lexicographically smallest strategy.
    """
    _check_lengths(config, profile.p)
    if config.N > max_n:
        raise ValueError(f"exhaustive search limited to N <= {max_n}, got N={config.N}")
    grid = simplex_grid(config.N, grid_step)
    losses = config.backhaul_time * (miss_factor(grid, config) @ profile.p)
    best = int(np.argmin(losses))  # argmin returns the first, i.e. lexicographically smallest
    pi = grid[best]
    strategy = CachingStrategy(pi / pi.sum())
    return CachingSolution(strategy, float(losses[best]), True, grid.shape[0])

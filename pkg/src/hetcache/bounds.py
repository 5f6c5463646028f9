"""Training-time bounds for learning the popularity profile.

Every bound has the same shape: with ``A = pi R**2`` and a "log budget"
``K``, the training time is finite only when ``lambda_u > K / A``, and then

    tau = max(0, log(1 / (1 - K / (lambda_u A))) / (lambda_r * rate))

for an estimator-specific ``rate`` in ``(0, 1]``.  The calculators below
differ only in how ``K`` and ``rate`` are built.

Where the accuracy has to be split across files, the bounds divide by
``sup_Pi sum_i g(pi_i)``; ``SupMode`` selects between the crude value ``N``
and the exact maximum ``N - 1 + exp(-lambda_s pi gamma**2)`` (``g`` is
convex, so the maximum sits on a vertex of the simplex).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .model import NetworkConfig, ParameterDomainError, ParametricFamily

# 1 - K/(lambda_u A) closer to zero than this is reported as infeasible
FEASIBILITY_GUARD = 1e-15


class SupMode(str, Enum):
    N_UPPER = "n_upper"
    EXACT_SUP = "exact_sup"


@dataclass(frozen=True)
class BoundQuery:
    config: NetworkConfig
    epsilon: float
    delta: float
    m: int = 0
    dist_inf: float = 0.0
    sup_mode: SupMode = SupMode.N_UPPER

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.m < 0:
            raise ValueError(f"m must be >= 0, got {self.m}")
        if not 0 <= self.dist_inf <= 1:
            raise ValueError(f"dist_inf must lie in [0, 1], got {self.dist_inf}")
        object.__setattr__(self, "sup_mode", SupMode(self.sup_mode))

    def with_(self, **changes) -> "BoundQuery":
        return replace(self, **changes)


def source_gap(config: NetworkConfig, epsilon: float, scale: float = 0.1) -> float:
    """Source/target sup-distance used in the numerical study: ``scale * eps R0 / (2 B N)``."""
    return scale * epsilon * config.R0 / (2 * config.B * config.N)


@dataclass(frozen=True)
class TrainingTimeBound:
    tau: float
    density_threshold: float
    feasible: bool
    intermediates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.feasible != math.isfinite(self.tau):
            raise AssertionError("tau must be finite exactly when the bound is feasible")
        if self.feasible and self.tau < 0:
            raise AssertionError("finite tau must be non-negative")
        object.__setattr__(self, "intermediates", MappingProxyType(dict(self.intermediates)))


def sup_sum_g(config: NetworkConfig, mode: SupMode = SupMode.N_UPPER) -> float:
    """``sup`` over strategies of ``sum_i g(pi_i)``, or its upper bound ``N``."""
    mode = SupMode(mode)
    if mode is SupMode.N_UPPER:
        return float(config.N)
    return (config.N - 1) + math.exp(-config.mean_sbs_in_range)


def _cell_area(config: NetworkConfig) -> float:
    return math.pi * config.R**2


def _waiting_time(budget, rate, lambda_u, area, lambda_r):
    """Vectorised core: returns (tau, density_threshold, tau_unclamped)."""
    budget = np.asarray(budget, dtype=np.float64)
    rate = np.asarray(rate, dtype=np.float64)
    threshold = budget / area
    x = budget / (lambda_u * area)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = -np.log1p(-x) / (lambda_r * rate)
    ok = (1.0 - x > FEASIBILITY_GUARD) & (rate > 0)
    raw = np.where(ok, raw, np.inf)
    tau = np.where(ok, np.maximum(raw, 0.0), np.inf)
    threshold = np.where(rate > 0, threshold, np.inf)
    return tau, threshold, raw


def _result(tau, threshold, raw, **intermediates) -> TrainingTimeBound:
    tau = float(tau)
    intermediates["tau_unclamped"] = float(raw)
    return TrainingTimeBound(tau, float(threshold), math.isfinite(tau), intermediates)


def _eps_bar(q: BoundQuery) -> tuple[float, float]:
    s = sup_sum_g(q.config, q.sup_mode)
    return q.config.R0 * q.epsilon / (2 * q.config.B * s), s


def tau_empirical(q: BoundQuery) -> TrainingTimeBound:
    """Training time for the target-only (agnostic) empirical estimator."""
    c = q.config
    eps_bar, s = _eps_bar(q)
    g_star = -math.expm1(-2 * eps_bar**2)
    budget = math.log(2 * c.N / q.delta)
    tau, thr, raw = _waiting_time(budget, g_star, c.lambda_u, _cell_area(c), c.lambda_r)
    return _result(tau, thr, raw, eps_bar=eps_bar, g_star=g_star, sup_sum_g=s, L=float(thr))


def tau_empirical_simplified(q: BoundQuery) -> float:
    """Closed-form relaxation ``2 B^2 N^2 log(2N/delta) / (pi R^2 lambda_u lambda_r R0^2 eps^2)``."""
    c = q.config
    return (
        2 * c.B**2 * c.N**2 * math.log(2 * c.N / q.delta)
        / (math.pi * c.R**2 * c.lambda_u * c.lambda_r * c.R0**2 * q.epsilon**2)
    )


def tau_per_user(q: BoundQuery) -> float:
    """Per-user training time: the relaxed bound with ``eps`` replaced by ``eps / lambda_r``."""
    c = q.config
    return (
        2 * c.B**2 * c.lambda_r * c.N**2 * math.log(2 * c.N / q.delta)
        / (math.pi * c.R**2 * c.lambda_u * c.R0**2 * q.epsilon**2)
    )


def _eps_pq(q: BoundQuery) -> tuple[float, float]:
    eps_bar, s = _eps_bar(q)
    eps_pq = eps_bar - q.dist_inf
    if not eps_pq > 0:
        floor = 2 * q.config.B * s * q.dist_inf / q.config.R0
        raise ParameterDomainError(
            f"accuracy below TL floor: epsilon={q.epsilon!r} must exceed {floor!r}"
        )
    return eps_bar, eps_pq


def tau_tl_pooled(q: BoundQuery) -> TrainingTimeBound:
    """Training time when target and ``m`` source requests are pooled."""
    c = q.config
    eps_bar, eps_pq = _eps_pq(q)
    rate = -math.expm1(-2 * eps_pq**2)
    budget = math.log(2 * c.N / q.delta) - 2 * eps_pq**2 * q.m
    area = _cell_area(c)
    tau, thr, raw = _waiting_time(budget, rate, c.lambda_u, area, c.lambda_r)
    return _result(
        tau, thr, raw,
        eps_bar=eps_bar, eps_pq=eps_pq, rho=float(thr),
        Lambda=budget / (c.lambda_u * area), rate=rate,
    )


@dataclass(frozen=True)
class TransferCondition:
    """Source-sample threshold above which pooling beats the agnostic bound."""

    m_min: int
    m_min_exact: float
    dist_condition_rhs: float
    F: float
    L: float
    status: str = "ok"


def prop1_check(q: BoundQuery) -> TransferCondition:
    c = q.config
    eps_bar, eps_pq = _eps_pq(q)
    log_term = math.log(2 * c.N / q.delta)
    users = c.lambda_u * _cell_area(c)
    L = log_term / users
    rhs = q.epsilon * c.R0 / (2 * c.B * c.lambda_u * math.pi * c.gamma**2 * c.N)
    if L >= 1:
        return TransferCondition(-1, math.nan, rhs, math.nan, L, "agnostic bound already infinite")
    ratio = math.expm1(-2 * eps_pq**2) / math.expm1(-2 * eps_bar**2)
    F = users * -math.expm1(ratio * math.log1p(-L))
    gap = log_term - F
    if gap <= 1e-12 * log_term:
        gap = 0.0
    m_exact = gap / (2 * eps_pq**2)
    return TransferCondition(math.ceil(m_exact), m_exact, rhs, F, L)


def _convex_core(eps_bar, dist, m, N, delta, alpha, eta):
    """Budget and rate for the convex-combination estimator (vectorised)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    omega = (eps_bar - (1 - alpha) * eta) / alpha
    omega_bar = omega - dist
    with np.errstate(over="ignore"):
        x = (2 * N / delta) * np.exp(-2 * omega_bar**2 * m)
    ok = (omega_bar > 0) & (x < 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        budget = np.where(ok, math.log(2 * N / delta) - np.log1p(-np.minimum(x, 1.0)), np.inf)
    rate = np.where(ok, -np.expm1(-2 * eta**2), 0.0)
    return budget, rate, omega, omega_bar, x


def _convex_G(q: BoundQuery) -> float:
    if q.m < 1:
        raise ParameterDomainError("convex-combination bound needs m >= 1 source samples")
    return q.dist_inf + math.sqrt(math.log(2 * q.config.N / q.delta) / (2 * q.m))


def convex_region(q: BoundQuery) -> tuple[float, float, float]:
    """``(eps_bar, G, alpha_max)`` for the convex-combination bound."""
    eps_bar, _ = _eps_pq(q)
    G = _convex_G(q)
    return eps_bar, G, min(eps_bar / G, 1.0)


def tau_tl_convex(q: BoundQuery, alpha: float, eta: float) -> TrainingTimeBound:
    """Training time for ``alpha * source + (1 - alpha) * target`` at free parameter ``eta``."""
    c = q.config
    eps_bar, G, alpha_max = convex_region(q)
    if not 0 < alpha < alpha_max:
        raise ParameterDomainError(
            f"need 0 < alpha < min(eps_bar/G, 1) = {alpha_max!r}, got alpha={alpha!r}"
        )
    eta_max = (eps_bar - alpha * G) / (1 - alpha)
    if not 0 <= eta < eta_max:
        raise ParameterDomainError(
            f"need 0 <= eta < (eps_bar - alpha G)/(1 - alpha) = {eta_max!r}, got eta={eta!r}"
        )
    budget, rate, omega, omega_bar, x = _convex_core(eps_bar, q.dist_inf, q.m, c.N, q.delta, alpha, eta)
    tau, thr, raw = _waiting_time(budget, rate, c.lambda_u, _cell_area(c), c.lambda_r)
    return _result(
        tau, thr, raw,
        eps_bar=eps_bar, G=G, omega=float(omega), omega_bar=float(omega_bar),
        g_t_star=float(rate), source_term=float(x), alpha=alpha, eta=eta,
    )


def _refine_grid(evaluate, n: int, rounds: int, seeds: int = 8):
    """Minimise ``evaluate(u, v)`` over the open unit square.

    A coarse ``n x n`` grid picks the ``seeds`` best cells; each is then
    zoomed ``rounds`` times.  Several seeds are needed because the bounds
    can have separate basins near both edges of the square.
    ``evaluate`` takes broadcastable arrays and returns an array of values.
    """
    grid = np.linspace(0.0, 1.0, n + 2)[1:-1]
    vals = evaluate(grid[:, None], grid[None, :])
    order = np.argsort(vals, axis=None, kind="stable")[:seeds]
    best = (math.inf, None, None)
    for flat in order:
        i, j = np.unravel_index(flat, vals.shape)
        if not np.isfinite(vals[i, j]):
            break
        u, v, val = float(grid[i]), float(grid[j]), float(vals[i, j])
        du = dv = 1.0 / (n + 1)
        for _ in range(rounds):
            us = np.linspace(max(0.0, u - du), min(1.0, u + du), 13)[1:-1]
            vs = np.linspace(max(0.0, v - dv), min(1.0, v + dv), 13)[1:-1]
            sub = evaluate(us[:, None], vs[None, :])
            a, b = np.unravel_index(np.argmin(sub), sub.shape)
            if sub[a, b] < val:
                u, v, val = float(us[a]), float(vs[b]), float(sub[a, b])
            du, dv = (us[1] - us[0]), (vs[1] - vs[0])
        if val < best[0]:
            best = (val, u, v)
    return best


def best_tl_convex(q: BoundQuery, grid: int = 120, rounds: int = 12) -> TrainingTimeBound:
    """Smallest convex-combination bound over the admissible ``(alpha, eta)`` region.

    ``alpha`` is scanned over ``(0, alpha_max)`` and ``eta`` over its
    ``alpha``-dependent interval with a zooming grid search.  When
    ``G < eps_bar`` the region reaches ``alpha -> 1``, where ``eta`` may
    grow without bound and the bound tends to its source-only limit; that
    edge is scanned separately on a log scale in ``1 - alpha`` because a
    linear grid cannot get close enough.  Returns an infeasible bound when
    no candidate gives a finite training time.
    """
    c = q.config
    eps_bar, G, alpha_max = convex_region(q)
    area = _cell_area(c)

    def params(u, v):
        alpha = u * alpha_max
        eta = v * (eps_bar - alpha * G) / (1 - alpha)
        return alpha, eta

    def tau_at(alpha, eta):
        budget, rate, *_ = _convex_core(eps_bar, q.dist_inf, q.m, c.N, q.delta, alpha, eta)
        return _waiting_time(budget, rate, c.lambda_u, area, c.lambda_r)[0]

    val, u, v = _refine_grid(lambda u, v: tau_at(*params(u, v)), grid, rounds)
    best = (val, *params(u, v)) if u is not None else (math.inf, None, None)

    if alpha_max == 1.0:
        slack = np.logspace(-1, -13, 4 * grid)[:, None]
        alpha = 1.0 - slack
        eta_max = (eps_bar - alpha * G) / slack
        # eta beyond a few units buys nothing: 1 - exp(-2 eta^2) is already 1
        eta = np.minimum(eta_max, 10.0) * np.linspace(0.0, 1.0, grid + 2)[None, 1:-1]
        vals = tau_at(alpha, eta)
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        if vals[i, j] < best[0]:
            best = (float(vals[i, j]), float(alpha[i, 0]), float(eta[i, j]))

    if not math.isfinite(best[0]):
        return TrainingTimeBound(math.inf, math.inf, False, {"eps_bar": eps_bar, "G": G})
    return tau_tl_convex(q, float(best[1]), float(best[2]))


def _check_family(family: ParametricFamily) -> None:
    if family.d < 1 or not family.a < family.b or not family.C > 0:
        raise ValueError("invalid parametric family")


def tau_parametric(q: BoundQuery, family: ParametricFamily) -> TrainingTimeBound:
    """Training time for the averaged single-sample parameter estimator; independent of ``N``."""
    _check_family(family)
    c = q.config
    omega = c.R0 * q.epsilon / (2 * c.B)
    sigma2 = 2 * omega**2 / (family.d * family.C**2 * family.width**2)
    rate = -math.expm1(-sigma2)
    budget = math.log(2 * family.d / q.delta)
    tau, thr, raw = _waiting_time(budget, rate, c.lambda_u, _cell_area(c), c.lambda_r)
    return _result(tau, thr, raw, Omega=omega, sigma2=sigma2, rate=rate)


def _param_tl_core(omega_c, theta_dist, width, m, d, delta, lam, D_t):
    lam = np.asarray(lam, dtype=np.float64)
    D_t = np.asarray(D_t, dtype=np.float64)
    omega_bar = (omega_c - D_t) / lam
    gap = omega_bar - theta_dist
    with np.errstate(over="ignore"):
        x = (2 * d / delta) * np.exp(-2 * m * gap**2 / width**2)
    ok = (gap > 0) & (x < 1) & (D_t > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        budget = np.where(ok, math.log(2 * d / delta) - np.log1p(-np.minimum(x, 1.0)), np.inf)
        sigma_t2 = 2 * D_t**2 / (d * (1 - lam) ** 2 * width**2)
    rate = np.where(ok, -np.expm1(-sigma_t2), 0.0)
    return budget, rate, omega_bar, sigma_t2, x


def parametric_tl_region(q: BoundQuery, family: ParametricFamily, m: int, theta_dist: float):
    """``(Omega / C, G_bar, lambda_max)`` for the parametric transfer bound."""
    _check_family(family)
    if m < 1:
        raise ParameterDomainError("parametric transfer bound needs m >= 1 source samples")
    if theta_dist < 0:
        raise ValueError("theta_dist must be >= 0")
    omega = q.config.R0 * q.epsilon / (2 * q.config.B)
    # the supremum of g over files and strategies is g(0) = 1
    omega_c = omega / family.C
    G_bar = theta_dist + family.width * math.sqrt(math.log(2 * family.d / q.delta) / (2 * m))
    return omega_c, G_bar, min(omega_c / G_bar, 1.0) if G_bar > 0 else 1.0


def tau_parametric_tl(
    q: BoundQuery,
    family: ParametricFamily,
    m: int,
    theta_dist: float,
    D_t: float,
    lam: float,
) -> TrainingTimeBound:
    """Training time for the fused estimate with source weight ``lam`` and target slack ``D_t``."""
    c = q.config
    omega_c, G_bar, lam_max = parametric_tl_region(q, family, m, theta_dist)
    if not 0 < lam < lam_max:
        raise ParameterDomainError(
            f"need 0 < lambda < min(Omega/(C G_bar), 1) = {lam_max!r}, got lambda={lam!r}"
        )
    D_max = omega_c - lam * G_bar
    if not 0 < D_t < D_max:
        raise ParameterDomainError(f"need 0 < D_t < Omega/C - lambda G_bar = {D_max!r}, got D_t={D_t!r}")
    budget, rate, omega_bar, sigma_t2, x = _param_tl_core(
        omega_c, theta_dist, family.width, m, family.d, q.delta, lam, D_t
    )
    tau, thr, raw = _waiting_time(budget, rate, c.lambda_u, _cell_area(c), c.lambda_r)
    return _result(
        tau, thr, raw,
        Omega=omega_c * family.C, Omega_bar=float(omega_bar), sigma_t2=float(sigma_t2),
        G_bar=G_bar, source_term=float(x), lam=lam, D_t=D_t,
    )


def best_parametric_tl(
    q: BoundQuery,
    family: ParametricFamily,
    m: int,
    theta_dist: float,
    grid: int = 120,
    rounds: int = 12,
) -> TrainingTimeBound:
    """Smallest parametric transfer bound over the admissible ``(lambda, D_t)`` region."""
    c = q.config
    omega_c, G_bar, lam_max = parametric_tl_region(q, family, m, theta_dist)
    area = _cell_area(c)

    def params(u, v):
        lam = u * lam_max
        return lam, v * (omega_c - lam * G_bar)

    def evaluate(u, v):
        lam, D_t = params(u, v)
        budget, rate, *_ = _param_tl_core(omega_c, theta_dist, family.width, m, family.d, q.delta, lam, D_t)
        return _waiting_time(budget, rate, c.lambda_u, area, c.lambda_r)[0]

    val, u, v = _refine_grid(evaluate, grid, rounds)
    if u is None or not math.isfinite(val):
        return TrainingTimeBound(math.inf, math.inf, False, {"G_bar": G_bar})
    lam, D_t = params(u, v)
    return tau_parametric_tl(q, family, m, theta_dist, float(D_t), float(lam))

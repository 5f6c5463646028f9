"""Batch experiments: bound sweeps, the end-to-end learning pipeline and the
Monte Carlo check of the closed-form loss.

Everything here returns plain tables (column names plus row tuples) that
``write_csv`` serialises; infinite training times are written as ``inf``.
"""
from __future__ import annotations

import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from functools import partial
from typing import Any, Optional, TextIO

import numpy as np

from .analytic import epsilon_from_fraction, offloading_loss, optimize_caching
from .bounds import (
    BoundQuery,
    SupMode,
    best_parametric_tl,
    best_tl_convex,
    source_gap,
    tau_empirical,
    tau_parametric,
    tau_tl_pooled,
)
from .estimation import SourceSamples, empirical_profile, tl_convex_profile, tl_pooled_profile
from .model import (
    CachingStrategy,
    NetworkConfig,
    ParameterDomainError,
    ParametricFamily,
    PopularityProfile,
    validate,
    zipf_profile,
)
from .spatial import generate_requests, monte_carlo_loss


class Kind(str, Enum):
    FIG1 = "fig1"
    FIG2 = "fig2"
    FIG3 = "fig3"
    FIG4 = "fig4"
    FIG5 = "fig5"
    VALIDATE_THM1 = "validate"
    END_TO_END = "end-to-end"


INTEGER_SWEEPS = {"N", "m", "d"}
SWEEP_NAMES = {
    Kind.FIG1: ("N", "m"),
    Kind.FIG2: ("N", "m"),
    Kind.FIG3: ("m", "N"),
    Kind.FIG4: ("m", "N"),
    Kind.FIG5: ("d", "m"),
    Kind.VALIDATE_THM1: (),
    Kind.END_TO_END: (),
}


@dataclass(frozen=True)
class Sweep:
    """Inclusive arithmetic range ``start, start + step, ..., <= stop``."""

    name: str
    start: float
    stop: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"sweep step must be > 0, got {self.step}")
        if self.stop < self.start:
            raise ValueError("sweep stop must be >= start")

    def values(self) -> list:
        count = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        vals = [self.start + k * self.step for k in range(count)]
        if self.name in INTEGER_SWEEPS:
            return [int(round(v)) for v in vals]
        return vals


DEFAULT_SWEEPS = {
    Kind.FIG1: Sweep("N", 2, 200, 1),
    Kind.FIG2: Sweep("N", 2, 200, 1),
    Kind.FIG3: Sweep("m", 0, 25000, 250),
    Kind.FIG4: Sweep("m", 250, 25000, 250),
    Kind.FIG5: Sweep("d", 1, 10, 1),
}


@dataclass(frozen=True)
class ExperimentSpec:
    """One batch experiment.

    ``epsilon_seconds`` overrides ``fraction`` when set.  ``C``, ``width``
    and ``theta_dist`` describe the parametric family of the fig5 sweep;
    ``d`` is its parameter dimension when ``d`` is not swept.  The
    end-to-end fields pick the true profile (``profile`` or Zipf with
    ``zipf_theta``), the source profile (``source_theta``, defaulting to the
    true one), the estimator and the collection time ``tau`` (default: the
    agnostic bound at ``(epsilon, delta)``).
    """

    kind: Kind
    config: NetworkConfig = field(default_factory=NetworkConfig)
    sweep: Optional[Sweep] = None
    delta: float = 0.02
    fraction: float = 0.6
    m: int = 100_000
    seed: int = 0
    trials: int = 100_000
    sup_mode: SupMode = SupMode.N_UPPER
    epsilon_seconds: Optional[float] = None
    dist_scale: float = 0.1
    C: float = 2.0
    width: float = 0.5
    theta_dist: float = 0.1
    d: int = 1
    grid: int = 120
    workers: int = 1
    estimator: str = "empirical"
    alpha: float = 0.5
    tau: Optional[float] = None
    runs: int = 1
    zipf_theta: float = 0.8
    source_theta: Optional[float] = None
    profile: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "sup_mode", SupMode(self.sup_mode))
        validate(self.config)
        if self.sweep is None and self.kind in DEFAULT_SWEEPS:
            object.__setattr__(self, "sweep", DEFAULT_SWEEPS[self.kind])
        if self.sweep is not None and self.sweep.name not in SWEEP_NAMES[self.kind]:
            raise ValueError(
                f"sweep parameter {self.sweep.name!r} is not recognised for {self.kind.value}; "
                f"choose from {SWEEP_NAMES[self.kind]}"
            )
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {sorted(ESTIMATORS)}, got {self.estimator!r}")
        if self.runs < 1 or self.trials < 1 or self.workers < 1:
            raise ValueError("runs, trials and workers must be >= 1")
        if self.profile is not None:
            object.__setattr__(self, "profile", tuple(float(v) for v in self.profile))

    @property
    def epsilon(self) -> float:
        if self.epsilon_seconds is not None:
            return float(self.epsilon_seconds)
        return epsilon_from_fraction(self.config, self.fraction)

    def with_(self, **changes) -> "ExperimentSpec":
        return replace(self, **changes)


@dataclass(frozen=True)
class Table:
    columns: tuple
    rows: tuple

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self, dest: str | os.PathLike | TextIO | None = None) -> None:
        write_csv(self, dest)


def format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        # repr gives the shortest round-tripping form and spells infinity "inf"
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(table: Table, dest=None) -> None:
    own = dest is not None and not hasattr(dest, "write")
    fh = open(dest, "w", encoding="utf-8", newline="") if own else (dest or sys.stdout)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([format_cell(v) for v in row])
    finally:
        if own:
            fh.close()


def read_csv(src) -> Table:
    """Inverse of ``write_csv`` for numeric tables; non-numeric cells stay strings."""
    own = not hasattr(src, "read")
    fh = open(src, encoding="utf-8", newline="") if own else src
    try:
        reader = csv.reader(fh)
        columns = tuple(next(reader))
        rows = []
        for raw in reader:
            row = []
            for cell in raw:
                if cell in ("true", "false"):
                    row.append(cell == "true")
                    continue
                try:
                    row.append(int(cell))
                except ValueError:
                    try:
                        row.append(float(cell))
                    except ValueError:
                        row.append(cell)
            rows.append(tuple(row))
    finally:
        if own:
            fh.close()
    return Table(columns, tuple(rows))


# ---------------------------------------------------------------- figures

FIGURE_COLUMNS = {
    Kind.FIG1: ("epsilon_s", "tau_agnostic_s", "tau_tl_pooled_s", "feasible_agnostic", "feasible_tl",
                "eps_bar", "eps_pq", "dist_inf", "L", "rho", "status"),
    Kind.FIG2: ("epsilon_s", "tau_agnostic_s", "tau_tl_convex_s", "feasible_agnostic", "feasible_tl",
                "eps_bar", "G", "alpha", "eta", "dist_inf", "status"),
    Kind.FIG5: ("epsilon_s", "tau_agnostic_s", "tau_tl_param_s", "feasible_agnostic", "feasible_tl",
                "Omega", "sigma2", "G_bar", "lam", "D_t", "status"),
}
FIGURE_COLUMNS[Kind.FIG3] = FIGURE_COLUMNS[Kind.FIG1]
FIGURE_COLUMNS[Kind.FIG4] = FIGURE_COLUMNS[Kind.FIG2]


def _point_query(spec: ExperimentSpec, name: str, value) -> tuple[BoundQuery, int]:
    config, m = spec.config, spec.m
    if name == "N":
        config = config.with_(N=int(value))
    elif name == "m":
        m = int(value)
    eps = spec.epsilon  # the loss floor does not depend on N
    q = BoundQuery(config, eps, spec.delta, m=m, dist_inf=source_gap(config, eps, spec.dist_scale),
                   sup_mode=spec.sup_mode)
    return q, m


def _nan_if_missing(bound, key):
    return float(bound.intermediates.get(key, math.nan))


def figure_row(spec: ExperimentSpec, value) -> tuple:
    """One CSV row of ``run_figure`` for sweep value ``value``."""
    name = spec.sweep.name
    q, m = _point_query(spec, name, value)
    kind = spec.kind
    if kind is Kind.FIG5:
        d = int(value) if name == "d" else spec.d
        family = ParametricFamily(d, 0.0, spec.width, spec.C, name="bound-only")
        agn = tau_parametric(q, family)
        status = "ok"
        try:
            tl = best_parametric_tl(q, family, m, spec.theta_dist, grid=spec.grid)
        except ParameterDomainError as exc:
            tl, status = None, str(exc)
        tl_tau = tl.tau if tl else math.inf
        return (value, q.epsilon, agn.tau, tl_tau, agn.feasible, bool(tl and tl.feasible),
                agn.intermediates["Omega"], agn.intermediates["sigma2"],
                _nan_if_missing(tl, "G_bar") if tl else math.nan,
                _nan_if_missing(tl, "lam") if tl else math.nan,
                _nan_if_missing(tl, "D_t") if tl else math.nan, status)

    agn = tau_empirical(q)
    status = "ok"
    tl = None
    try:
        tl = tau_tl_pooled(q) if kind in (Kind.FIG1, Kind.FIG3) else best_tl_convex(q, grid=spec.grid)
    except ParameterDomainError as exc:
        status = str(exc)
    tl_tau = tl.tau if tl else math.inf
    feas = bool(tl and tl.feasible)
    get = (lambda k: _nan_if_missing(tl, k)) if tl else (lambda k: math.nan)
    if kind in (Kind.FIG1, Kind.FIG3):
        return (value, q.epsilon, agn.tau, tl_tau, agn.feasible, feas,
                agn.intermediates["eps_bar"], get("eps_pq"), q.dist_inf, agn.intermediates["L"],
                get("rho"), status)
    return (value, q.epsilon, agn.tau, tl_tau, agn.feasible, feas,
            agn.intermediates["eps_bar"], get("G"), get("alpha"), get("eta"), q.dist_inf, status)


def _ordered_map(fn, values, workers: int) -> list:
    if workers <= 1 or len(values) <= 1:
        return [fn(v) for v in values]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map yields in submission order whatever the completion order
        return list(pool.map(fn, values))


def run_figure(spec: ExperimentSpec) -> Table:
    """Agnostic and transfer bounds at every sweep point, in sweep order."""
    if spec.kind not in FIGURE_COLUMNS:
        raise ValueError(f"{spec.kind.value} is not a figure experiment")
    values = spec.sweep.values()
    rows = _ordered_map(partial(figure_row, spec), values, spec.workers)
    return Table((spec.sweep.name,) + FIGURE_COLUMNS[spec.kind], tuple(rows))


# ------------------------------------------------------------ end to end

ESTIMATORS = {"empirical", "tl_pooled", "tl_convex"}


@dataclass(frozen=True)
class EndToEndRun:
    run: int
    tau: float
    n_users: int
    n_requests: int
    profile_hat: PopularityProfile
    strategy_hat: CachingStrategy
    loss_learned: float
    gap: float


@dataclass(frozen=True)
class EndToEndReport:
    epsilon: float
    delta: float
    tau: float
    optimum_loss: float
    optimum_strategy: CachingStrategy
    runs: tuple

    @property
    def violation_rate(self) -> float:
        return sum(r.gap > self.epsilon for r in self.runs) / len(self.runs)

    def table(self) -> Table:
        N = self.optimum_strategy.N
        cols = ("run", "tau_s", "n_users", "n_requests", "loss_learned_s", "loss_opt_s", "gap_s", "violated") \
            + tuple(f"p_hat_{i + 1}" for i in range(N)) + tuple(f"pi_hat_{i + 1}" for i in range(N))
        rows = tuple(
            (r.run, r.tau, r.n_users, r.n_requests, r.loss_learned, self.optimum_loss, r.gap,
             r.gap > self.epsilon, *r.profile_hat.p.tolist(), *r.strategy_hat.pi.tolist())
            for r in self.runs
        )
        return Table(cols, rows)


def true_profile(spec: ExperimentSpec) -> PopularityProfile:
    if spec.profile is not None:
        p = PopularityProfile(spec.profile)
        if p.N != spec.config.N:
            raise ValueError(f"profile has {p.N} entries but N={spec.config.N}")
        return p
    return zipf_profile(spec.config.N, spec.zipf_theta)


def _estimate(spec, log, source, N):
    if spec.estimator == "empirical":
        return empirical_profile(log, N)
    if spec.estimator == "tl_pooled":
        return tl_pooled_profile(log, source, N)
    return tl_convex_profile(log, source, spec.alpha, N)


def run_end_to_end(spec: ExperimentSpec) -> EndToEndReport:
    """Collect requests for ``tau`` seconds, learn the profile, cache by it, and score against the truth.

    Each of ``spec.runs`` repetitions draws from its own child of
    ``SeedSequence(spec.seed)``.  Zero collected requests with a
    target-only estimator raise ``InsufficientDataError``.
    """
    config = spec.config
    N = config.N
    P = true_profile(spec)
    Q = P if spec.source_theta is None else zipf_profile(N, spec.source_theta)
    eps = spec.epsilon
    if spec.tau is None:
        bound = tau_empirical(BoundQuery(config, eps, spec.delta, sup_mode=spec.sup_mode))
        if not bound.feasible:
            raise ValueError("agnostic training-time bound is infinite for this spec; pass tau explicitly")
        tau = bound.tau
    else:
        tau = float(spec.tau)
    best = optimize_caching(config, P)

    runs = []
    for k, child in enumerate(np.random.SeedSequence(spec.seed).spawn(spec.runs)):
        rng = np.random.default_rng(child)
        log = generate_requests(config, P, tau, rng)
        source = SourceSamples.draw(Q, spec.m, rng) if spec.estimator != "empirical" else None
        p_hat = _estimate(spec, log, source, N)
        learned = optimize_caching(config, p_hat).strategy
        loss = offloading_loss(config, learned, P)
        runs.append(EndToEndRun(k, tau, log.n_users, log.total, p_hat, learned, loss, loss - best.loss))
    return EndToEndReport(eps, spec.delta, tau, best.loss, best.strategy, tuple(runs))


# ------------------------------------------------------------ validation


@dataclass(frozen=True)
class ValidationCase:
    name: str
    seed: int
    config: NetworkConfig
    strategy: CachingStrategy
    profile: PopularityProfile


class ValidationFailure(AssertionError):
    pass


@dataclass(frozen=True)
class ValidationReport:
    table: Table
    failures: tuple

    @property
    def passed(self) -> bool:
        return not self.failures

    def raise_for_failures(self) -> None:
        if self.failures:
            raise ValidationFailure("closed form outside 4 stderr of Monte Carlo: " + "; ".join(self.failures))


def validation_cases(seed: int = 0, count: int = 20) -> list[ValidationCase]:
    """``count`` random cases plus a no-SBS case and a one-file case.

    Random cases draw ``N <= 20``, ``M <= 5``, ``lambda_s`` log-uniform on
    ``[1e-6, 1e-4]`` and ``gamma`` uniform on ``[50, 300]``.
    """
    cases = []
    children = np.random.SeedSequence(seed).spawn(count + 2)
    for k, child in enumerate(children[:count]):
        case_seed = int(child.generate_state(1, dtype=np.uint64)[0])
        rng = np.random.default_rng(case_seed)
        N = int(rng.integers(1, 21))
        config = NetworkConfig(
            lambda_s=float(10 ** rng.uniform(-6, -4)),
            gamma=float(rng.uniform(50, 300)),
            M=int(rng.integers(1, 6)),
            N=N,
        )
        w = rng.dirichlet(np.ones(N))
        strategy = CachingStrategy(w / w.sum())
        profile = zipf_profile(N, float(rng.uniform(0, 1.5)))
        cases.append(ValidationCase(f"random-{k:02d}", case_seed, config, strategy, profile))
    # lambda_s = 0 sits outside validate()'s positive-density rule on purpose
    s0 = int(children[count].generate_state(1, dtype=np.uint64)[0])
    cases.append(ValidationCase("no-sbs", s0, NetworkConfig(lambda_s=0.0, N=4, M=2),
                                CachingStrategy.uniform(4), zipf_profile(4, 0.8)))
    s1 = int(children[count + 1].generate_state(1, dtype=np.uint64)[0])
    cases.append(ValidationCase("single-file", s1, NetworkConfig(N=1), CachingStrategy([1.0]),
                                PopularityProfile([1.0])))
    return cases


def check_case(case: ValidationCase, trials: int) -> tuple:
    closed = offloading_loss(case.config, case.strategy, case.profile)
    est = monte_carlo_loss(case.config, case.strategy, case.profile, trials, case.seed)
    diff = abs(closed - est.mean)
    # with every trial a hit (or every trial a miss) the sample stderr is 0;
    # one trial's worth of loss is then the finest difference MC can resolve
    tol = 4 * est.stderr if est.stderr > 0 else case.config.backhaul_time / trials
    c = case.config
    return (case.name, case.seed, c.N, c.M, c.lambda_s, c.gamma, closed, est.mean, est.stderr, diff, diff <= tol)


def run_validation(spec: ExperimentSpec | None = None) -> ValidationReport:
    """Closed-form loss against Monte Carlo for every case of ``validation_cases``."""
    spec = spec or ExperimentSpec(Kind.VALIDATE_THM1)
    cases = validation_cases(spec.seed)
    rows = _ordered_map(partial(check_case, trials=spec.trials), cases, spec.workers)
    cols = ("case", "seed", "N", "M", "lambda_s", "gamma", "closed_form_s", "mc_mean_s", "mc_stderr_s",
            "abs_diff_s", "pass")
    failures = tuple(f"{r[0]} (seed {r[1]})" for r in rows if not r[-1])
    return ValidationReport(Table(cols, tuple(rows)), failures)


def spec_from_mapping(kind, data: dict) -> ExperimentSpec:
    """Build a spec from a plain mapping such as a parsed YAML file.

    Network fields live under ``config``; ``sweep`` is a mapping with
    ``name, start, stop, step``.  Unknown keys are rejected.
    """
    data = dict(data or {})
    known = {f.name for f in fields(ExperimentSpec)} - {"kind"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown experiment fields: {sorted(unknown)}")
    net = data.pop("config", None) or {}
    net_known = {f.name for f in fields(NetworkConfig)}
    bad = set(net) - net_known
    if bad:
        raise ValueError(f"unknown network fields: {sorted(bad)}")
    data["config"] = NetworkConfig(**net)
    if data.get("sweep") is not None:
        data["sweep"] = Sweep(**data["sweep"])
    return ExperimentSpec(kind=kind, **data)

"""Popularity-profile estimators: empirical, transfer-learning and parametric."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .model import InsufficientDataError, ParametricFamily, PopularityProfile
from .spatial import RequestLog, as_generator, read_request_log


@dataclass(frozen=True, eq=False)
class SourceSamples:
    """Per-file request counts observed in the source domain."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ValueError("source counts must be a vector of non-negative integers")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def m(self) -> int:
        return int(self.counts.sum())

    @property
    def N(self) -> int:
        return self.counts.size

    @classmethod
    def from_indices(cls, file_indices, N: int) -> "SourceSamples":
        return cls(np.bincount(np.asarray(file_indices, dtype=np.int64), minlength=N))

    @classmethod
    def draw(cls, profile: PopularityProfile, m: int, rng) -> "SourceSamples":
        """``m`` i.i.d. source requests from ``profile``."""
        rng = as_generator(rng)
        return cls(rng.multinomial(m, profile.p))

    @classmethod
    def read(cls, src: str | os.PathLike | TextIO, N: int) -> "SourceSamples":
        """Load from the request-log text format; user ids and timestamps are ignored."""
        return cls(read_request_log(src).counts(N))


def _check_source(source: SourceSamples, N: int) -> None:
    if source.N != N:
        raise ValueError(f"source counts have length {source.N}, expected {N}")


def empirical_profile(log: RequestLog, N: int) -> PopularityProfile:
    """Relative request frequency of each file in the target log."""
    counts = log.counts(N)
    total = counts.sum()
    if total == 0:
        raise InsufficientDataError(f"no requests logged (n_users={log.n_users}, tau={log.tau})")
    return PopularityProfile(counts / total)


def tl_pooled_profile(log: RequestLog, source: SourceSamples, N: int) -> PopularityProfile:
    """Relative frequency over target and source requests pooled together."""
    _check_source(source, N)
    counts = log.counts(N) + source.counts
    total = counts.sum()
    if total == 0:
        raise InsufficientDataError("no target requests and no source samples")
    return PopularityProfile(counts / total)


def tl_convex_profile(log: RequestLog, source: SourceSamples, alpha: float, N: int) -> PopularityProfile:
    """``alpha * source frequency + (1 - alpha) * target frequency``.

    A side with zero weight may be empty.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    _check_source(source, N)
    mix = np.zeros(N)
    if alpha < 1.0:
        mix += (1.0 - alpha) * empirical_profile(log, N).p
    if alpha > 0.0:
        if source.m == 0:
            raise InsufficientDataError("alpha > 0 but there are no source samples")
        mix += alpha * (source.counts / source.m)
    return PopularityProfile(mix / mix.sum())


def parametric_estimate(file_indices, family: ParametricFamily) -> np.ndarray:
    """Average of single-request estimates, kept inside the parameter box."""
    idx = np.asarray(file_indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise InsufficientDataError("parametric estimate needs at least one sample")
    theta = family.estimate_one(idx).mean(axis=0)
    return np.clip(theta, family.a, family.b)


def parametric_tl_fuse(theta_t, theta_s, lam: float) -> np.ndarray:
    """``lam * theta_t + (1 - lam) * theta_s``."""
    t = np.asarray(theta_t, dtype=np.float64).reshape(-1)
    s = np.asarray(theta_s, dtype=np.float64).reshape(-1)
    if t.shape != s.shape:
        raise ValueError(f"dimension mismatch: {t.size} vs {s.size}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return lam * t + (1.0 - lam) * s

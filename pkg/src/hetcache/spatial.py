"""Monte Carlo ground truth: point processes, cache placement and request streams."""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np

from .model import CachingStrategy, NetworkConfig, PopularityProfile

MC_CHUNK = 20_000


def as_generator(rng) -> np.random.Generator:
    """Accept a ``Generator``, an integer seed or ``None``."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_ppp_disc(density: float, radius: float, rng) -> np.ndarray:
    """Homogeneous PPP restricted to the disc of ``radius`` about the origin.

    Returns an ``(n, 2)`` array; ``n`` is Poisson with mean ``density * pi * radius**2``.
    """
    if density < 0:
        raise ValueError(f"density must be >= 0, got {density}")
    rng = as_generator(rng)
    n = rng.poisson(density * math.pi * radius**2)
    r = radius * np.sqrt(rng.random(n))
    phi = 2.0 * math.pi * rng.random(n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


@dataclass(frozen=True, eq=False)
class SpatialScene:
    sbs_points: np.ndarray
    user_points: np.ndarray
    region_radius: float

    def __post_init__(self):
        for name in ("sbs_points", "user_points"):
            pts = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1, 2)
            if pts.size and np.any(np.hypot(pts[:, 0], pts[:, 1]) > self.region_radius * (1 + 1e-12)):
                raise ValueError(f"{name} must lie inside the region disc")
            object.__setattr__(self, name, pts)


def sample_scene(config: NetworkConfig, region_radius: float, rng) -> SpatialScene:
    rng = as_generator(rng)
    sbs = sample_ppp_disc(config.lambda_s, region_radius, rng)
    users = sample_ppp_disc(config.lambda_u, region_radius, rng)
    return SpatialScene(sbs, users, region_radius)


def _in_range(points: np.ndarray, x, gamma: float) -> np.ndarray:
    d = points - np.asarray(x, dtype=np.float64)
    # strict: an SBS at exactly gamma is not a neighbor
    return np.einsum("ij,ij->i", d, d) < gamma * gamma


def neighbors(scene: SpatialScene, x, gamma: float) -> np.ndarray:
    """Indices of SBSs strictly closer than ``gamma`` to the point ``x``."""
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    return np.flatnonzero(_in_range(scene.sbs_points, x, gamma))


def place_caches(n_sbs: int, strategy: CachingStrategy, M: int, rng) -> np.ndarray:
    """Cache contents as an ``(n_sbs, M)`` array of 0-based file indices, slots i.i.d. from the strategy."""
    rng = as_generator(rng)
    return rng.choice(strategy.N, size=(n_sbs, M), p=strategy.pi)


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float
    trials: int

    def __iter__(self):
        yield self.mean
        yield self.stderr


def _loss_chunk(config, strategy, profile, trials, rng, region_factor):
    """Miss count for ``trials`` independent typical-user experiments."""
    region = region_factor * config.gamma
    counts = rng.poisson(config.lambda_s * math.pi * region**2, size=trials)
    total = int(counts.sum())
    r = region * np.sqrt(rng.random(total))
    phi = 2.0 * math.pi * rng.random(total)
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    owner = np.repeat(np.arange(trials), counts)[_in_range(pts, (0.0, 0.0), config.gamma)]
    requested = rng.choice(profile.N, size=trials, p=profile.p)
    caches = place_caches(owner.size, strategy, config.M, rng)
    holds = (caches == requested[owner][:, None]).any(axis=1)
    served = np.zeros(trials, dtype=bool)
    served[owner[holds]] = True
    return int(trials - served.sum())


def monte_carlo_loss(
    config: NetworkConfig,
    strategy: CachingStrategy,
    profile: PopularityProfile,
    trials: int,
    rng,
    region_factor: float = 1.5,
) -> MonteCarloEstimate:
    """Simulated offloading loss for a user at the origin.

    Each trial draws the SBS process on a disc of ``region_factor * gamma``,
    keeps the SBSs inside the communication radius, fills their caches from
    ``strategy``, draws one request from ``profile`` and charges ``B / R0``
    when no neighbor holds the file.  Trials run in fixed-size chunks, each
    with its own spawned generator, so results do not depend on how the
    chunks are scheduled.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if region_factor < 1:
        raise ValueError("region_factor must be >= 1")
    if strategy.N != config.N or profile.N != config.N:
        raise ValueError("dimension mismatch between config, strategy and profile")
    rng = as_generator(rng)
    sizes = [MC_CHUNK] * (trials // MC_CHUNK)
    if trials % MC_CHUNK:
        sizes.append(trials % MC_CHUNK)
    misses = sum(
        _loss_chunk(config, strategy, profile, size, child, region_factor)
        for size, child in zip(sizes, rng.spawn(len(sizes)))
    )
    # losses are 0 or B/R0, so the sample moments follow from the miss count
    bt = config.backhaul_time
    frac = misses / trials
    mean = bt * frac
    var = bt * bt * frac * (1 - frac) * trials / (trials - 1) if trials > 1 else 0.0
    return MonteCarloEstimate(mean, math.sqrt(var / trials), trials)


@dataclass(frozen=True, eq=False)
class RequestLog:
    """Requests collected by the BS over ``[0, tau]``.

    Flat arrays sorted by ``(user_id, timestamp)``; ``file_index`` is 0-based.
    ``n_users`` counts users in the cell, including those with no requests.
    """

    user_id: np.ndarray
    timestamp: np.ndarray
    file_index: np.ndarray
    tau: float
    n_users: int

    def __post_init__(self):
        uid = np.asarray(self.user_id, dtype=np.int64).reshape(-1)
        ts = np.asarray(self.timestamp, dtype=np.float64).reshape(-1)
        fi = np.asarray(self.file_index, dtype=np.int64).reshape(-1)
        if not (uid.size == ts.size == fi.size):
            raise ValueError("request arrays must have equal length")
        if ts.size and (ts.min() < 0 or ts.max() > self.tau):
            raise ValueError("timestamps must lie in [0, tau]")
        if np.any(fi < 0):
            raise ValueError("file indices must be non-negative")
        order = np.lexsort((ts, uid))
        for name, arr in (("user_id", uid), ("timestamp", ts), ("file_index", fi)):
            arr = arr[order]
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def total(self) -> int:
        return int(self.file_index.size)

    def counts(self, N: int) -> np.ndarray:
        if self.total and self.file_index.max() >= N:
            raise ValueError(f"log references file {self.file_index.max() + 1} beyond N={N}")
        return np.bincount(self.file_index, minlength=N)

    def per_user(self, user: int) -> list[tuple[float, int]]:
        sel = self.user_id == user
        return list(zip(self.timestamp[sel].tolist(), self.file_index[sel].tolist()))

    @classmethod
    def from_indices(cls, file_indices: Iterable[int], tau: float = 0.0) -> "RequestLog":
        """Log with one anonymous user per request, all at time 0."""
        fi = np.asarray(list(file_indices), dtype=np.int64)
        return cls(np.arange(fi.size), np.zeros(fi.size), fi, tau, fi.size)


def generate_requests(config: NetworkConfig, profile: PopularityProfile, tau: float, rng) -> RequestLog:
    """Requests from the users of one BS cell of radius ``R`` over ``[0, tau]``.

    The user count is Poisson with mean ``lambda_u * pi * R**2``; each user
    issues a Poisson(``lambda_r * tau``) number of requests at uniform
    times, each for a file drawn from ``profile``.
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    rng = as_generator(rng)
    n_users = int(rng.poisson(config.mean_users_in_cell))
    per_user = rng.poisson(config.lambda_r * tau, size=n_users)
    uid = np.repeat(np.arange(n_users), per_user)
    ts = tau * rng.random(uid.size)
    fi = rng.choice(profile.N, size=uid.size, p=profile.p)
    return RequestLog(uid, ts, fi, float(tau), n_users)


HEADER = "user_id,timestamp_s,file_index"


def write_request_log(log: RequestLog, dest: str | os.PathLike | TextIO) -> None:
    """Write ``user_id,timestamp_s,file_index`` lines; file indices are 1-based."""
    own = not hasattr(dest, "write")
    fh = open(dest, "w", encoding="utf-8", newline="\n") if own else dest
    try:
        fh.write(f"# tau={log.tau!r} n_users={log.n_users}\n")
        fh.write(HEADER + "\n")
        for u, t, f in zip(log.user_id.tolist(), log.timestamp.tolist(), log.file_index.tolist()):
            fh.write(f"{u},{t!r},{f + 1}\n")
    finally:
        if own:
            fh.close()


def read_request_log(src: str | os.PathLike | TextIO) -> RequestLog:
    """Parse the format written by ``write_request_log``.

    The ``#`` metadata line and the header are optional; without metadata,
    ``tau`` is the largest timestamp and ``n_users`` the number of distinct ids.
    """
    own = not hasattr(src, "read")
    fh = open(src, encoding="utf-8") if own else src
    try:
        text = fh.read()
    finally:
        if own:
            fh.close()
    tau = None
    n_users = None
    uid, ts, fi = [], [], []
    for lineno, line in enumerate(io.StringIO(text), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                if key == "tau":
                    tau = float(val)
                elif key == "n_users":
                    n_users = int(val)
            continue
        if line.replace(" ", "") == HEADER:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 3 comma-separated fields")
        index = int(parts[2])
        if index < 1:
            raise ValueError(f"line {lineno}: file_index must be >= 1")
        uid.append(int(parts[0]))
        ts.append(float(parts[1]))
        fi.append(index - 1)
    if tau is None:
        tau = max(ts, default=0.0)
    if n_users is None:
        n_users = len(set(uid))
    return RequestLog(np.array(uid, dtype=np.int64), np.array(ts), np.array(fi, dtype=np.int64), tau, n_users)

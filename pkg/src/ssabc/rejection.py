"""Rejection ABC engine with pluggable statistics and distances.

The engine is three deterministic phases over per-replication random
streams: simulate (draw from the prior, run the model), summarise
(statistic per simulated series, vectorised when the statistic offers a
``batch`` method), and select (distance to the observed statistic,
accept the lowest quantile).  Replication ``i`` of run ``r`` always uses
``stream(seed, r + 1, i)``, so any single replication can be reproduced
bitwise in isolation and worker counts cannot change results.

Distances come in two flavours: plain callables ``d(s_obs, s_sim)``
applied row by row, and pool-aware objects exposing
``pool(s_obs, stats, draws)`` for criteria that need the whole batch
(variance-weighted Euclidean, the regression-projection distance).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, ParameterError, RunError
from .streams import stream

__all__ = [
    "DISTANCE_KINDS",
    "AbcConfig",
    "AbcRun",
    "FpRegression",
    "simulate_replication",
    "simulate_pool",
    "statistic_batch",
    "compute_distances",
    "select_accepted",
    "abc_rejection",
    "parallel_map",
    "dist_summ_euclid",
    "fp_fit",
    "fp_distance",
    "dist_joint_score",
    "dist_marginal_score",
    "dist_mle",
    "SummEuclidDistance",
    "FpDistance",
    "JointScoreDistance",
    "MarginalScoreDistance",
    "MleDistance",
]

DISTANCE_KINDS = ("summ-euclid", "fp", "joint-score", "marginal-score", "mle")


@dataclass(frozen=True)
class AbcConfig:
    """Replication count, acceptance quantile, seed and matching method."""

    R: int
    accept_quantile: float = 0.05
    seed: int = 0
    distance_kind: str = "summ-euclid"
    target_param: int | None = None
    fp_split_pilot: bool = False

    def __post_init__(self):
        if self.R < 100:
            raise ConfigError(f"need R >= 100, got {self.R}")
        if not (0.0 < self.accept_quantile <= 1.0):
            raise ConfigError(f"need 0 < accept_quantile <= 1, got {self.accept_quantile}")
        if self.distance_kind not in DISTANCE_KINDS:
            raise ConfigError(f"unknown distance kind {self.distance_kind!r}; pick from {DISTANCE_KINDS}")
        if self.distance_kind in ("fp", "marginal-score") and self.target_param is None:
            raise ConfigError(f"{self.distance_kind} needs target_param set")


@dataclass
class AbcRun:
    """One finished rejection run.

    ``accepted`` holds ascending replication indices; its length is
    exactly ceil(accept_quantile * R) and ``epsilon`` is the largest
    accepted distance.
    """

    draws: np.ndarray
    stats: np.ndarray
    distances: np.ndarray
    epsilon: float
    accepted: np.ndarray
    n_nonfinite: int = 0


@dataclass
class FpRegression:
    """Least-squares projection coefficients for one target parameter."""

    alpha_hat: float
    beta_hat: np.ndarray


def parallel_map(fn: Callable, items, threads: int = 1) -> list:
    """Order-preserving map, threaded when ``threads > 1``."""
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def simulate_replication(prior, simulator, seed: int, run_key: tuple, i: int):
    """Draw (phi, z) for replication ``i`` from its own dedicated stream."""
    rng = stream(seed, *run_key, i)
    phi = prior.sample(rng)
    return phi, simulator(phi, rng)


def simulate_pool(prior, simulator, R: int, seed: int, run_key: tuple, threads: int = 1):
    """All R replications of a run: draws (R, p) and series matrix (R, T).

    The series matrix comes back in Fortran order: the pooled likelihood
    evaluators sweep it once per parameter point and want the time-major
    transpose as a free view.
    """
    pairs = parallel_map(lambda i: simulate_replication(prior, simulator, seed, run_key, i), range(R), threads)
    draws = np.stack([np.atleast_1d(np.asarray(p, dtype=float)) for p, _ in pairs])
    Z = np.empty((R, pairs[0][1].shape[0]), order="F")
    for i, (_, z) in enumerate(pairs):
        Z[i] = z
    return draws, Z


def statistic_batch(statistic_fn, Z: np.ndarray, threads: int = 1) -> np.ndarray:
    """Statistics of every row of ``Z``, via the batch fast path if offered."""
    batch = getattr(statistic_fn, "batch", None)
    if callable(batch):
        stats = np.asarray(batch(Z), dtype=float)
    else:
        rows = parallel_map(lambda z: np.atleast_1d(np.asarray(statistic_fn(z), dtype=float)), Z, threads)
        stats = np.stack(rows)
    return stats.reshape(Z.shape[0], -1)


def compute_distances(distance_fn, s_obs: np.ndarray, stats: np.ndarray, draws: np.ndarray):
    """Distances of every replication, with the non-finite quarantine policy.

    Uses ``distance_fn.pool(s_obs, stats, draws)`` when offered, else
    applies the callable row by row.  Non-finite values become +inf with
    a warning; more than 10% of them raises RunError.
    """
    pool = getattr(distance_fn, "pool", None)
    if callable(pool):
        distances = np.asarray(pool(s_obs, stats, draws), dtype=float)
    else:
        distances = np.array([distance_fn(s_obs, s) for s in stats], dtype=float)
    R = distances.size
    bad = ~np.isfinite(distances)
    n_nonfinite = int(bad.sum())
    if n_nonfinite:
        warnings.warn(f"{n_nonfinite} of {R} distances were non-finite; assigned +inf", RuntimeWarning)
        distances = np.where(bad, np.inf, distances)
    if n_nonfinite > 0.10 * R:
        raise RunError(f"{n_nonfinite}/{R} non-finite distances exceeds the 10% budget")
    return distances, n_nonfinite


def select_accepted(distances: np.ndarray, accept_quantile: float):
    """Lowest-quantile selection with deterministic tie breaking.

    Exactly ceil(q*R) indices come back, in ascending order; ties at the
    threshold go to the lower replication index (stable sort).
    """
    distances = np.asarray(distances, dtype=float)
    R = distances.size
    m = math.ceil(accept_quantile * R)
    order = np.argsort(distances, kind="stable")
    accepted = np.sort(order[:m])
    epsilon = float(distances[accepted].max())
    return accepted, epsilon


def abc_rejection(
    config: AbcConfig,
    prior,
    simulator,
    statistic_fn,
    distance_fn,
    y_obs: np.ndarray,
    run_index: int = 0,
    threads: int = 1,
) -> AbcRun:
    """One full rejection run against the observed series ``y_obs``.

    ``simulator(phi, rng) -> series`` must draw only from ``rng``.  A
    non-finite distance is quarantined as +inf (counted); more than 10%
    of them aborts the run.  Replication i uses stream
    ``(seed, run_index + 1, i)``, so results are independent of
    ``threads``.
    """
    draws, Z = simulate_pool(prior, simulator, config.R, config.seed, (run_index + 1,), threads)
    s_obs = np.atleast_1d(np.asarray(statistic_fn(y_obs), dtype=float)).ravel()
    stats = statistic_batch(statistic_fn, Z, threads)
    distances, n_nonfinite = compute_distances(distance_fn, s_obs, stats, draws)
    accepted, epsilon = select_accepted(distances, config.accept_quantile)
    return AbcRun(
        draws=draws,
        stats=stats,
        distances=distances,
        epsilon=epsilon,
        accepted=accepted,
        n_nonfinite=n_nonfinite,
    )


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def _weighted_euclid(diff: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """sqrt(sum diff^2 / var) along the last axis, dropping zero-variance terms."""
    variances = np.asarray(variances, dtype=float)
    keep = variances > 0.0
    if not np.all(keep):
        warnings.warn(
            f"dropping {int((~keep).sum())} zero-variance summary statistic(s) from the distance",
            RuntimeWarning,
        )
    d2 = (np.asarray(diff, dtype=float) ** 2)[..., keep] / variances[keep]
    return np.sqrt(d2.sum(axis=-1))


def dist_summ_euclid(s_obs: np.ndarray, s_sim: np.ndarray, variances: np.ndarray) -> float:
    """Variance-weighted Euclidean distance between two statistic vectors."""
    if np.any(np.asarray(variances, dtype=float) < 0.0):
        raise ParameterError("variances must be nonnegative")
    return float(_weighted_euclid(np.asarray(s_sim, float) - np.asarray(s_obs, float), variances))


class SummEuclidDistance:
    """Euclidean distance weighted by the pool variance of each statistic.

    The variances are computed once per run from all R simulated
    statistic vectors (population variance), then applied to every
    replication; they are kept on ``last_variances`` for inspection.
    """

    def __init__(self):
        self.last_variances: np.ndarray | None = None

    def pool(self, s_obs, stats, draws):
        stats = np.asarray(stats, dtype=float)
        self.last_variances = stats.var(axis=0)
        return _weighted_euclid(stats - np.asarray(s_obs, float), self.last_variances)


def fp_fit(draws: np.ndarray, stats: np.ndarray, j: int, split_pilot: bool = False) -> FpRegression:
    """Least-squares fit of target draws on [1, statistics].

    With ``split_pilot`` the coefficients come from the first half of
    the replications only (the classic pilot/selection split); default
    uses the full batch.  A rank-deficient design falls back to ridge
    with penalty 1e-8 and a warning.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    stats = np.asarray(stats, dtype=float)
    if draws.shape[0] < 100:
        raise ParameterError(f"regression pilot needs >= 100 replications, got {draws.shape[0]}")
    if not (0 <= j < draws.shape[1]):
        raise ParameterError(f"target index {j} outside the draw columns")
    n = draws.shape[0] // 2 if split_pilot else draws.shape[0]
    X = np.column_stack([np.ones(n), stats[:n]])
    target = draws[:n, j]
    coef, _, rank, _ = np.linalg.lstsq(X, target, rcond=None)
    if rank < X.shape[1]:
        warnings.warn("rank-deficient regression design; using ridge fallback (penalty 1e-8)", RuntimeWarning)
        G = X.T @ X + 1e-8 * np.eye(X.shape[1])
        coef = np.linalg.solve(G, X.T @ target)
    return FpRegression(alpha_hat=float(coef[0]), beta_hat=coef[1:].copy())


def fp_distance(reg: FpRegression, s_obs: np.ndarray, s_sim: np.ndarray) -> float:
    """|projection difference|; the intercept cancels."""
    diff = np.asarray(s_sim, dtype=float) - np.asarray(s_obs, dtype=float)
    return float(abs(diff @ reg.beta_hat))


class FpDistance:
    """Regression-projection distance, fitted on the run's own pilot."""

    def __init__(self, j: int, split_pilot: bool = False):
        self.j = j
        self.split_pilot = split_pilot
        self.last_regression: FpRegression | None = None

    def pool(self, s_obs, stats, draws):
        reg = fp_fit(draws, stats, self.j, self.split_pilot)
        self.last_regression = reg
        proj = np.asarray(stats, float) @ reg.beta_hat
        return np.abs(proj - float(np.asarray(s_obs, float) @ reg.beta_hat))


def _check_pd(M: np.ndarray, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ParameterError(f"{name} must be a square matrix")
    if not np.allclose(M, M.T, atol=1e-10):
        raise ParameterError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() <= 0.0:
        raise ParameterError(f"{name} must be positive definite")
    return M


def dist_joint_score(S: np.ndarray, sigma_weight: np.ndarray) -> float:
    """sqrt(S' W S) for a positive-definite weighting W."""
    S = np.asarray(S, dtype=float)
    return float(np.sqrt(max(S @ sigma_weight @ S, 0.0)))


def dist_marginal_score(s_y: float, s_z: float) -> float:
    """Absolute difference of two scalar scores."""
    if not (np.isfinite(s_y) and np.isfinite(s_z)):
        raise ParameterError("marginal-score distance needs finite scores")
    return float(abs(s_y - s_z))


def dist_mle(beta_y: np.ndarray, beta_z: np.ndarray, omega: np.ndarray) -> float:
    """Weighted distance between two auxiliary estimates: sqrt(diff' W diff)."""
    diff = np.asarray(beta_y, dtype=float) - np.asarray(beta_z, dtype=float)
    return float(np.sqrt(max(diff @ omega @ diff, 0.0)))


class _QuadFormDistance:
    """Row-vectorised sqrt((s - s_obs)' W (s - s_obs))."""

    def __init__(self, weight: np.ndarray, name: str):
        self.weight = _check_pd(weight, name)

    def __call__(self, s_obs, s_sim):
        d = np.asarray(s_sim, float) - np.asarray(s_obs, float)
        return float(np.sqrt(max(d @ self.weight @ d, 0.0)))

    def pool(self, s_obs, stats, draws):
        d = np.asarray(stats, float) - np.asarray(s_obs, float)
        vals = np.einsum("ij,jk,ik->i", d, self.weight, d)
        return np.sqrt(np.maximum(vals, 0.0))


class JointScoreDistance(_QuadFormDistance):
    """Score-matching distance with the inverse negative-Hessian weight.

    The observed score at the anchor estimate is ~0 by construction, so
    this agrees with weighting the simulated score alone up to optimizer
    tolerance; subtracting it keeps the distance an exact metric.
    """

    def __init__(self, sigma_weight: np.ndarray):
        super().__init__(sigma_weight, "sigma_weight")


class MleDistance(_QuadFormDistance):
    """Estimate-matching distance weighted by the negative Hessian."""

    def __init__(self, omega: np.ndarray):
        super().__init__(omega, "omega")


class MarginalScoreDistance:
    """|observed marginal score - simulated marginal score| (both scalars)."""

    def __call__(self, s_obs, s_sim):
        return dist_marginal_score(float(np.asarray(s_obs).ravel()[0]), float(np.asarray(s_sim).ravel()[0]))

    def pool(self, s_obs, stats, draws):
        return np.abs(np.asarray(stats, float)[:, 0] - float(np.asarray(s_obs).ravel()[0]))

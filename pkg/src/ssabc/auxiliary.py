"""Auxiliary models and their matching statistics.

An :class:`AuxiliaryModel` is any parametric log-likelihood evaluator
``loglik(series, beta)`` over a bounded parameter box.  This module
turns one into the ingredients ABC matching needs:

* ``fit_mle`` - maximum likelihood with a multistart Nelder-Mead;
* ``score`` - the scaled score T^{-1} dL/dbeta by central differences;
* ``integrated_loglik`` / ``marginal_score`` - the likelihood with all
  parameters but one integrated out (trapezoid over the box), and the
  score of that integrated likelihood;
* statistic objects wiring these into the rejection engine, including
  pooled (vectorised over replications) evaluation paths.

Factories at the bottom build the two concrete auxiliary models used in
the experiments: the exact Kalman likelihood for the linear Gaussian
model and the unscented-filter likelihood for the volatility model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .errors import ConditioningError, FitError, NumericalError, ParameterError, SupportError
from .filters import aukf_loglik_batch, kalman_loglik, kalman_loglik_grid, kalman_loglik_pool
from .models import LgParams

__all__ = [
    "AuxiliaryModel",
    "FittedAux",
    "default_starts",
    "fit_mle",
    "score",
    "score_pool",
    "integrated_loglik",
    "integrated_loglik_pool",
    "marginal_score",
    "marginal_score_pool",
    "marginal_mle",
    "JointScoreStatistic",
    "MarginalScoreStatistic",
    "MleStatistic",
    "lg_auxiliary_model",
    "heston_auxiliary_model",
    "DEFAULT_LG_BOUNDS",
    "DEFAULT_HESTON_BOUNDS",
]

# Parameter boxes used throughout the experiments (order: rho, delta, sigma_v).
DEFAULT_LG_BOUNDS = (np.array([0.0, -0.5, 0.1]), np.array([0.99, 0.7, 2.0]))
DEFAULT_HESTON_BOUNDS = (np.array([0.5, 1e-4, 0.01]), np.array([0.999, 0.01, 0.15]))


@dataclass
class AuxiliaryModel:
    """A bounded parametric log-likelihood, plus optional fast paths.

    ``loglik(series, beta) -> float`` is the contract; ``loglik_pool``
    evaluates many series at one beta and ``loglik_grid`` one series at
    many betas, both purely optional accelerations.
    """

    loglik: Callable[[np.ndarray, np.ndarray], float]
    dim: int
    bounds: tuple[np.ndarray, np.ndarray]
    loglik_pool: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    loglik_grid: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None


@dataclass
class FittedAux:
    """MLE output: the estimate, the score-weighting matrix and its inverse.

    ``sigma_weight`` is the inverse of the negative Hessian of the
    T-scaled log-likelihood at ``beta_hat`` (eigenvalue-floored so it is
    always symmetric positive definite); ``neg_hess`` is that floored
    negative Hessian itself.
    """

    beta_hat: np.ndarray
    sigma_weight: np.ndarray
    neg_hess: np.ndarray


def default_starts(bounds: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Three deterministic starts: the box centre and centre +/- 25% width."""
    lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)
    centre = 0.5 * (lo + hi)
    width = hi - lo
    return np.stack([centre, centre + 0.25 * width, centre - 0.25 * width])


def fit_mle(model: AuxiliaryModel, y: np.ndarray, starts: np.ndarray | None = None) -> FittedAux:
    """Maximise ``model.loglik(y, .)`` over the box by Nelder-Mead.

    Runs from each start (default: :func:`default_starts`), keeps the
    best optimum, and stops a run once the simplex diameter is below
    1e-8 and the objective spread below 1e-10.
    """
    lo, hi = model.bounds
    if starts is None:
        starts = default_starts(model.bounds)
    starts = np.atleast_2d(np.asarray(starts, dtype=float))

    def neg(beta):
        val = model.loglik(y, beta)
        return -val if np.isfinite(val) else np.inf

    best = None
    for s in starts:
        if not np.isfinite(neg(s)):
            continue
        res = optimize.minimize(
            neg,
            s,
            method="Nelder-Mead",
            bounds=optimize.Bounds(lo, hi),
            options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 5000, "maxfev": 10000},
        )
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun):
        raise FitError("log-likelihood was non-finite at every start point")

    beta_hat = np.asarray(best.x, dtype=float)
    T = y.shape[-1]
    neg_hess = -_hessian(lambda b: model.loglik(y, b) / T, beta_hat)
    if not np.all(np.isfinite(neg_hess)):
        raise ConditioningError("Hessian evaluation produced non-finite values")
    neg_hess = 0.5 * (neg_hess + neg_hess.T)
    evals, evecs = np.linalg.eigh(neg_hess)
    evals = np.maximum(evals, 1e-10)
    neg_hess = (evecs * evals) @ evecs.T
    sigma = (evecs / evals) @ evecs.T
    return FittedAux(beta_hat=beta_hat, sigma_weight=sigma, neg_hess=neg_hess)


def _hessian(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    """Central-difference Hessian with steps 1e-4 * max(1, |x_j|)."""
    d = x.size
    h = 1e-4 * np.maximum(1.0, np.abs(x))
    H = np.empty((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (
                4.0 * h[i] * h[j]
            )
    return H


def _steps(beta: np.ndarray) -> np.ndarray:
    return 1e-5 * np.maximum(1.0, np.abs(beta))


def score(model: AuxiliaryModel, z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Scaled score T^{-1} dL/dbeta at ``beta`` by central differences.

    ``beta`` must be interior to the box.  A non-finite difference is
    retried once with the step shrunk tenfold before raising.
    """
    beta = np.asarray(beta, dtype=float)
    lo, hi = model.bounds
    if not np.all((beta > lo) & (beta < hi)):
        raise ParameterError("score needs beta interior to the model bounds")
    T = z.shape[-1]
    h = _steps(beta)
    g = np.empty(model.dim)
    for j in range(model.dim):
        g[j] = _central_diff(lambda b: model.loglik(z, b), beta, j, h[j]) / T
    return g


def _central_diff(f, beta, j, h):
    for step in (h, h / 10.0):
        bp = beta.copy()
        bp[j] += step
        bm = beta.copy()
        bm[j] -= step
        lp, lm = f(bp), f(bm)
        if np.isfinite(lp) and np.isfinite(lm):
            return (lp - lm) / (2.0 * step)
    raise NumericalError(f"non-finite log-likelihood when differencing coordinate {j}")


def score_pool(model: AuxiliaryModel, Z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Scores of every row of ``Z`` at one beta, using the pooled evaluator.

    Rows still non-finite after one tenfold step shrink are returned as
    NaN (the rejection engine maps those to infinite distance).
    """
    if model.loglik_pool is None:
        return np.stack([score(model, z, beta) for z in Z])
    beta = np.asarray(beta, dtype=float)
    T = Z.shape[-1]
    h = _steps(beta)
    cols = []
    for j in range(model.dim):
        col = _pool_diff(model, Z, beta, j, h[j]) / T
        bad = ~np.isfinite(col)
        if np.any(bad):
            col[bad] = _pool_diff(model, Z[bad], beta, j, h[j] / 10.0) / T
        cols.append(col)
    return np.stack(cols, axis=-1)


def _pool_diff(model, Z, beta, j, h):
    bp = beta.copy()
    bp[j] += h
    bm = beta.copy()
    bm[j] -= h
    return (model.loglik_pool(Z, bp) - model.loglik_pool(Z, bm)) / (2.0 * h)


# ---------------------------------------------------------------------------
# Integrated likelihood and the marginal score
# ---------------------------------------------------------------------------


def _nuisance_mesh(model: AuxiliaryModel, j: int, phi_j: float, n_points: int):
    """Full-dimension beta matrix (M, dim) over the nuisance grid, plus log-weights (M,)."""
    lo, hi = model.bounds
    others = [k for k in range(model.dim) if k != j]
    axes = [np.linspace(lo[k], hi[k], n_points) for k in others]
    mesh = np.meshgrid(*axes, indexing="ij") if axes else []
    M = int(np.prod([n_points] * len(others))) if others else 1
    betas = np.empty((M, model.dim))
    betas[:, j] = phi_j
    for k, grid in zip(others, mesh):
        betas[:, k] = grid.ravel()
    logw = np.zeros(M)
    for idx, k in enumerate(others):
        axis = axes[idx]
        w = np.empty(n_points)
        w[0] = 0.5 * (axis[1] - axis[0])
        w[-1] = 0.5 * (axis[-1] - axis[-2])
        w[1:-1] = 0.5 * (axis[2:] - axis[:-2])
        shape = [1] * len(others)
        shape[idx] = n_points
        logw = logw + np.broadcast_to(np.log(w).reshape(shape), [n_points] * len(others)).ravel()
    return betas, logw


def integrated_loglik(model: AuxiliaryModel, z: np.ndarray, j: int, phi_j: float, nuisance_points: int = 15) -> float:
    """log of the likelihood integrated over every parameter but ``j``.

    Tensor-trapezoid over the box on ``nuisance_points`` points per
    nuisance axis, accumulated in log space.  With dim == 1 there is
    nothing to integrate and the plain log-likelihood returns.
    """
    _check_target(model, j, phi_j)
    if model.dim == 1:
        val = model.loglik(z, np.array([phi_j]))
        if not np.isfinite(val) and not val == -np.inf:
            raise NumericalError("log-likelihood evaluation returned NaN")
        return float(val)
    betas, logw = _nuisance_mesh(model, j, phi_j, nuisance_points)
    if model.loglik_grid is not None:
        L = np.asarray(model.loglik_grid(z, betas), dtype=float)
    else:
        L = np.array([model.loglik(z, b) for b in betas], dtype=float)
    vals = L + logw
    if np.all(np.isneginf(vals)):
        raise SupportError("integrated likelihood vanished over the whole nuisance box")
    return float(logsumexp(vals))


def integrated_loglik_pool(
    model: AuxiliaryModel, Z: np.ndarray, j: int, phi_j: float, nuisance_points: int = 15
) -> np.ndarray:
    """Pooled variant: integrated log-likelihood of each row of ``Z``."""
    _check_target(model, j, phi_j)
    if model.loglik_pool is None:
        return np.array([integrated_loglik(model, z, j, phi_j, nuisance_points) for z in Z])
    if model.dim == 1:
        return np.asarray(model.loglik_pool(Z, np.array([phi_j])), dtype=float)
    betas, logw = _nuisance_mesh(model, j, phi_j, nuisance_points)
    L = np.stack([model.loglik_pool(Z, b) for b in betas])  # (M, R)
    return logsumexp(L + logw[:, None], axis=0)


def _check_target(model, j, phi_j):
    if not (0 <= j < model.dim):
        raise ParameterError(f"target index {j} outside 0..{model.dim - 1}")
    lo, hi = model.bounds
    if not (lo[j] <= phi_j <= hi[j]):
        raise ParameterError(f"phi_j={phi_j} outside bounds [{lo[j]}, {hi[j]}]")


def marginal_score(
    model: AuxiliaryModel, z: np.ndarray, j: int, phi_j: float, nuisance_points: int = 15
) -> float:
    """Scaled derivative of the integrated log-likelihood at ``phi_j``."""
    T = z.shape[-1]
    h = 1e-5 * max(1.0, abs(phi_j))
    f = lambda p: integrated_loglik(model, z, j, p, nuisance_points)
    for step in (h, h / 10.0):
        lp, lm = f(phi_j + step), f(phi_j - step)
        if np.isfinite(lp) and np.isfinite(lm):
            return (lp - lm) / (2.0 * step * T)
    raise NumericalError("non-finite integrated likelihood when differencing the target")


def marginal_score_pool(
    model: AuxiliaryModel, Z: np.ndarray, j: int, phi_j: float, nuisance_points: int = 15
) -> np.ndarray:
    """Marginal scores of every row of ``Z``; NaN where still non-finite after a shrink."""
    T = Z.shape[-1]
    h = 1e-5 * max(1.0, abs(phi_j))
    out = _marginal_diff_pool(model, Z, j, phi_j, h, nuisance_points) / T
    bad = ~np.isfinite(out)
    if np.any(bad):
        out[bad] = _marginal_diff_pool(model, Z[bad], j, phi_j, h / 10.0, nuisance_points) / T
    return out


def _marginal_diff_pool(model, Z, j, phi_j, h, nuisance_points):
    lp = integrated_loglik_pool(model, Z, j, phi_j + h, nuisance_points)
    lm = integrated_loglik_pool(model, Z, j, phi_j - h, nuisance_points)
    return (lp - lm) / (2.0 * h)


def marginal_mle(
    model: AuxiliaryModel, y: np.ndarray, j: int, nuisance_points: int = 15, n_grid: int = 200
) -> float:
    """Maximiser of the integrated likelihood of ``y`` in coordinate ``j``.

    Grid search on ``n_grid`` points over bounds[j], refined by one
    parabolic interpolation through the argmax and its neighbours.
    """
    lo, hi = model.bounds
    grid = np.linspace(lo[j], hi[j], n_grid)
    # keep differencing at the optimum inside the box later on
    pad = 1e-5 * max(1.0, abs(hi[j])) * 1.5
    vals = np.array([integrated_loglik(model, y, j, p, nuisance_points) for p in grid])
    i = int(np.argmax(vals))
    if i == 0 or i == n_grid - 1:
        return float(np.clip(grid[i], lo[j] + pad, hi[j] - pad))
    denom = vals[i - 1] - 2.0 * vals[i] + vals[i + 1]
    if denom >= 0.0:
        return float(grid[i])
    step = grid[1] - grid[0]
    vertex = grid[i] + 0.5 * step * (vals[i - 1] - vals[i + 1]) / denom
    return float(np.clip(vertex, lo[j] + pad, hi[j] - pad))


# ---------------------------------------------------------------------------
# Statistic objects for the rejection engine
# ---------------------------------------------------------------------------


class JointScoreStatistic:
    """Score of the full auxiliary model at a fixed anchor estimate."""

    def __init__(self, model: AuxiliaryModel, beta_hat: np.ndarray):
        self.model = model
        self.beta_hat = np.asarray(beta_hat, dtype=float)

    def __call__(self, z):
        return score(self.model, z, self.beta_hat)

    def batch(self, Z):
        return score_pool(self.model, Z, self.beta_hat)


class MarginalScoreStatistic:
    """Marginal score for one coordinate at a fixed anchor estimate."""

    def __init__(self, model: AuxiliaryModel, j: int, phi_j_hat: float, nuisance_points: int = 15):
        self.model = model
        self.j = j
        self.phi_j_hat = float(phi_j_hat)
        self.nuisance_points = nuisance_points

    def __call__(self, z):
        return np.array([marginal_score(self.model, z, self.j, self.phi_j_hat, self.nuisance_points)])

    def batch(self, Z):
        return marginal_score_pool(self.model, Z, self.j, self.phi_j_hat, self.nuisance_points)[:, None]


class MleStatistic:
    """Auxiliary MLE of each simulated series (no pooled fast path)."""

    def __init__(self, model: AuxiliaryModel, starts: np.ndarray | None = None):
        self.model = model
        self.starts = starts

    def __call__(self, z):
        return fit_mle(self.model, z, self.starts).beta_hat


# ---------------------------------------------------------------------------
# Concrete auxiliary models
# ---------------------------------------------------------------------------


def _expand_fixed(dim_full: int, fixed: dict[int, float] | None):
    fixed = dict(fixed or {})
    free = [k for k in range(dim_full) if k not in fixed]
    template = np.zeros(dim_full)
    for k, v in fixed.items():
        template[k] = v

    def expand(beta):
        full = template.copy()
        full[free] = beta
        return full

    def expand_many(betas):
        betas = np.atleast_2d(betas)
        full = np.tile(template, (betas.shape[0], 1))
        full[:, free] = betas
        return full

    return free, expand, expand_many


def lg_auxiliary_model(
    sigma_e: float,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
    fixed: dict[int, float] | None = None,
) -> AuxiliaryModel:
    """Exact Kalman likelihood as an auxiliary model over (rho, delta, sigma_v).

    ``fixed`` pins coordinates (by index into that order) so the free
    ones form the model's parameter vector; ``sigma_e`` is a known
    constant throughout.
    """
    lo, hi = bounds if bounds is not None else DEFAULT_LG_BOUNDS
    free, expand, expand_many = _expand_fixed(3, fixed)

    def loglik(z, beta):
        try:
            params = LgParams(*expand(np.asarray(beta, float)), sigma_e=sigma_e)
        except ParameterError:
            return -np.inf
        return kalman_loglik(z, params)

    def loglik_pool(Z, beta):
        try:
            params = LgParams(*expand(np.asarray(beta, float)), sigma_e=sigma_e)
        except ParameterError:
            return np.full(Z.shape[0], -np.inf)
        return kalman_loglik_pool(Z, params)

    def loglik_grid(y, betas):
        full = expand_many(np.asarray(betas, float))
        return kalman_loglik_grid(y, full[:, 0], full[:, 1], full[:, 2], sigma_e)

    return AuxiliaryModel(
        loglik=loglik,
        dim=len(free),
        bounds=(np.asarray(lo, float)[free], np.asarray(hi, float)[free]),
        loglik_pool=loglik_pool,
        loglik_grid=loglik_grid,
    )


def heston_auxiliary_model(
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
    fixed: dict[int, float] | None = None,
    grid_chunk: int = 8192,
) -> AuxiliaryModel:
    """Unscented-filter likelihood as an auxiliary model over (rho, delta, sigma_v)."""
    lo, hi = bounds if bounds is not None else DEFAULT_HESTON_BOUNDS
    free, expand, expand_many = _expand_fixed(3, fixed)

    def _valid(full):
        return 0.0 < full[0] < 1.0 and full[1] > 0.0 and full[2] > 0.0

    def loglik(r, beta):
        full = expand(np.asarray(beta, float))
        if not _valid(full):
            return -np.inf
        return float(aukf_loglik_batch(np.asarray(r, float)[None, :], full[0], full[1], full[2])[0])

    def loglik_pool(Z, beta):
        full = expand(np.asarray(beta, float))
        if not _valid(full):
            return np.full(Z.shape[0], -np.inf)
        return aukf_loglik_batch(Z, full[0], full[1], full[2])

    def loglik_grid(r, betas):
        full = expand_many(np.asarray(betas, float))
        r = np.asarray(r, float)
        out = np.empty(full.shape[0])
        for a in range(0, full.shape[0], grid_chunk):
            b = min(a + grid_chunk, full.shape[0])
            tiled = np.broadcast_to(r, (b - a, r.size))
            out[a:b] = aukf_loglik_batch(tiled, full[a:b, 0], full[a:b, 1], full[a:b, 2])
        return out

    return AuxiliaryModel(
        loglik=loglik,
        dim=len(free),
        bounds=(np.asarray(lo, float)[free], np.asarray(hi, float)[free]),
        loglik_pool=loglik_pool,
        loglik_grid=loglik_grid,
    )

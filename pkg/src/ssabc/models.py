"""Data-generating processes.

Two state space models live here, together with their exact transition
machinery and the summary statistics used by ABC:

* a linear Gaussian model, ``y_t = x_t + sigma_e e_t`` with an AR(1)
  state ``x_t = delta + rho x_{t-1} + sigma_v v_t``;
* a square-root stochastic volatility model, ``r_t = sqrt(V_t) eps_t``
  with a CIR variance process whose unit-interval transition is a
  non-central chi-squared law.

Simulators are pure functions of (params, length, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numba
import numpy as np
from scipy import signal, special

from .errors import DegeneratePriorError, NumericalError, ParameterError
from .streams import as_generator

__all__ = [
    "LgParams",
    "HestonParams",
    "UniformPrior",
    "PARAM_NAMES",
    "simulate_lg",
    "simulate_heston",
    "cir_sample_transition",
    "cir_transition_density",
    "ar1_summary_stats",
]

PARAM_NAMES = ("rho", "delta", "sigma_v")

_LOG2 = math.log(2.0)


@dataclass(frozen=True)
class LgParams:
    """Linear Gaussian model parameters.

    Observation: y_t = x_t + sigma_e * e_t
    State:       x_t = delta + rho * x_{t-1} + sigma_v * v_t

    with e_t, v_t independent standard normals and the state started at
    its stationary law.
    """

    rho: float
    delta: float
    sigma_v: float
    sigma_e: float

    def __post_init__(self):
        if not (abs(self.rho) < 1.0):
            raise ParameterError(f"need |rho| < 1 for stationarity, got rho={self.rho}")
        if not (self.sigma_v > 0.0):
            raise ParameterError(f"need sigma_v > 0, got {self.sigma_v}")
        if not (self.sigma_e > 0.0):
            raise ParameterError(f"need sigma_e > 0, got {self.sigma_e}")
        for name in ("rho", "delta", "sigma_v", "sigma_e"):
            if not np.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")

    @property
    def stationary_mean(self) -> float:
        return self.delta / (1.0 - self.rho)

    @property
    def stationary_var(self) -> float:
        """Stationary variance of the latent state x."""
        return self.sigma_v**2 / (1.0 - self.rho**2)

    @classmethod
    def from_sn_ratio(cls, rho: float, delta: float, sigma_v: float, sn_ratio: float) -> "LgParams":
        """Fix sigma_e so that var(x)/var(measurement error) equals ``sn_ratio``."""
        if not (sn_ratio > 0.0):
            raise ParameterError(f"need sn_ratio > 0, got {sn_ratio}")
        if not abs(rho) < 1.0:
            raise ParameterError(f"need |rho| < 1 for a stationary state, got {rho}")
        sigma_x2 = sigma_v**2 / (1.0 - rho**2)
        return cls(rho=rho, delta=delta, sigma_v=sigma_v, sigma_e=math.sqrt(sigma_x2 / sn_ratio))


@dataclass(frozen=True)
class HestonParams:
    """Square-root stochastic volatility parameters.

    Returns:  r_t = sqrt(V_t) * eps_t
    Variance: dV = (delta - alpha V) dt + sigma_v sqrt(V) dW, alpha = 1 - rho,

    observed at integer times, so V_{t} | V_{t-1} is c^{-1}/2 times a
    non-central chi-squared draw.  Requires the Feller condition
    2 delta >= sigma_v^2 so V stays strictly positive.
    """

    rho: float
    delta: float
    sigma_v: float

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise ParameterError(f"need 0 < rho < 1, got {self.rho}")
        if not (self.delta > 0.0):
            raise ParameterError(f"need delta > 0, got {self.delta}")
        if not (self.sigma_v > 0.0):
            raise ParameterError(f"need sigma_v > 0, got {self.sigma_v}")
        if 2.0 * self.delta < self.sigma_v**2:
            raise ParameterError(
                f"Feller condition violated: 2*delta={2 * self.delta} < sigma_v^2={self.sigma_v ** 2}"
            )

    @property
    def alpha(self) -> float:
        return 1.0 - self.rho

    @cached_property
    def exp_neg_alpha(self) -> float:
        return math.exp(-self.alpha)

    @cached_property
    def c(self) -> float:
        """Scale of the transition: 2cV_t | V_{t-1} is non-central chi-squared."""
        return 2.0 * self.alpha / (self.sigma_v**2 * (1.0 - self.exp_neg_alpha))

    @cached_property
    def q(self) -> float:
        """Degrees-of-freedom parameter, 2q+2 central df in the transition."""
        return 2.0 * self.delta / self.sigma_v**2 - 1.0

    @property
    def stationary_mean(self) -> float:
        return self.delta / self.alpha

    @property
    def stationary_var(self) -> float:
        return self.sigma_v**2 * self.delta / (2.0 * self.alpha**2)

    @property
    def stationary_gamma_shape(self) -> float:
        return 2.0 * self.delta / self.sigma_v**2

    @property
    def stationary_gamma_scale(self) -> float:
        return self.sigma_v**2 / (2.0 * self.alpha)


@dataclass(frozen=True)
class UniformPrior:
    """Uniform density on a box, optionally cut by a joint constraint.

    ``joint_constraint`` receives arrays shaped (..., p) and must return a
    boolean array shaped (...); the density is constant on the admissible
    region and zero outside it.
    """

    lower: np.ndarray
    upper: np.ndarray
    joint_constraint: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ParameterError("prior bounds must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ParameterError("prior needs lower < upper in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, phi) -> np.ndarray:
        """Boolean admissibility of points shaped (..., p)."""
        phi = np.asarray(phi, dtype=float)
        ok = np.all((phi >= self.lower) & (phi <= self.upper), axis=-1)
        if self.joint_constraint is not None:
            ok = ok & np.asarray(self.joint_constraint(phi), dtype=bool)
        return ok

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw one point (size=None) or ``size`` points by rejection."""
        if size is None:
            if self.joint_constraint is None:
                return rng.uniform(self.lower, self.upper)
            trials = 0
            while trials < 10_000_000:
                cand = rng.uniform(self.lower, self.upper, size=(256, self.dim))
                trials += 256
                ok = np.flatnonzero(np.asarray(self.joint_constraint(cand), dtype=bool))
                if ok.size:
                    return cand[ok[0]]
            raise DegeneratePriorError("prior acceptance rate below 1e-6 over 1e7 trials")
        out = np.empty((size, self.dim))
        filled = 0
        trials = 0
        while filled < size:
            m = max(size - filled, 1024)
            cand = rng.uniform(self.lower, self.upper, size=(m, self.dim))
            trials += m
            if self.joint_constraint is None:
                keep = cand
            else:
                keep = cand[np.asarray(self.joint_constraint(cand), dtype=bool)]
            take = min(keep.shape[0], size - filled)
            out[filled : filled + take] = keep[:take]
            filled += take
            if trials >= 10_000_000 and filled / trials < 1e-6:
                raise DegeneratePriorError("prior acceptance rate below 1e-6 over 1e7 trials")
        return out


def simulate_lg(params: LgParams, T: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the linear Gaussian model; returns (x, y), each length T.

    x_1 is drawn from the stationary law, so the series is strictly
    stationary for any T >= 2.
    """
    if T < 2:
        raise ParameterError(f"need T >= 2, got {T}")
    rng = as_generator(seed)
    z0 = rng.standard_normal()
    v = rng.standard_normal(T - 1)
    e = rng.standard_normal(T)
    drive = np.empty(T)
    drive[0] = params.stationary_mean + math.sqrt(params.stationary_var) * z0
    drive[1:] = params.delta + params.sigma_v * v
    # x_t = drive_t + rho x_{t-1}, x_1 = drive_1
    x = signal.lfilter([1.0], [1.0, -params.rho], drive)
    y = x + params.sigma_e * e
    return x, y


# The composition draw lives in a single jitted kernel so that stepping a
# path inside simulate_heston and drawing one-off transitions through
# cir_sample_transition consume the generator identically: a path equals
# the fold of single-step draws over the same stream.


@numba.njit(cache=True)
def _cir_steps(rng, v_prev, coef, df_base, inv_2c):
    out = np.empty(v_prev.shape[0])
    for i in range(v_prev.shape[0]):
        j = rng.poisson(coef * v_prev[i])
        out[i] = rng.chisquare(df_base + 2.0 * j) * inv_2c
    return out


@numba.njit(cache=True)
def _cir_path(rng, v1, T, coef, df_base, inv_2c):
    V = np.empty(T)
    V[0] = v1
    for t in range(1, T):
        j = rng.poisson(coef * V[t - 1])
        V[t] = rng.chisquare(df_base + 2.0 * j) * inv_2c
    return V


def simulate_heston(params: HestonParams, T: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the volatility model; returns (V, r), each length T.

    V_1 comes from the stationary gamma law and each step uses the exact
    non-central chi-squared transition, so no discretisation error enters.
    """
    if T < 2:
        raise ParameterError(f"need T >= 2, got {T}")
    rng = as_generator(seed)
    v1 = rng.gamma(params.stationary_gamma_shape, params.stationary_gamma_scale)
    V = _cir_path(rng, v1, T, params.c * params.exp_neg_alpha, 2.0 * params.q + 2.0, 0.5 / params.c)
    r = np.sqrt(V) * rng.standard_normal(T)
    return V, r


def cir_sample_transition(v_prev, params: HestonParams, rng: np.random.Generator):
    """Exact draw of V_t given V_{t-1} (scalar or array ``v_prev``).

    Composition sampler: j ~ Poisson(u) with u = c v_prev e^{-alpha},
    then g ~ chi-squared(2q + 2 + 2j) and V_t = g / (2c).
    """
    arr = np.asarray(v_prev, dtype=float)
    if np.any(arr <= 0.0):
        raise ParameterError("v_prev must be positive")
    flat = np.ascontiguousarray(arr.ravel(), dtype=float)
    out = _cir_steps(rng, flat, params.c * params.exp_neg_alpha, 2.0 * params.q + 2.0, 0.5 / params.c)
    if np.ndim(v_prev) == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def cir_transition_density(v, v_prev, params: HestonParams, max_terms: int = 100_000):
    """Transition density p(V_t = v | V_{t-1} = v_prev); broadcasts over inputs.

    Evaluated in log space as a log-sum-exp over the Poisson mixture
    (weight j) of central chi-squared densities; the series is cut once a
    term falls below 1e-16 of the running maximum.
    """
    v = np.asarray(v, dtype=float)
    vp = np.asarray(v_prev, dtype=float)
    if np.any(v <= 0.0) or np.any(vp <= 0.0):
        raise ParameterError("the transition density needs v > 0 and v_prev > 0")
    c, q = params.c, params.q
    u = c * params.exp_neg_alpha * vp
    x = 2.0 * c * v  # chi-squared argument
    u, x = np.broadcast_arrays(u, x)
    u = u.astype(float)
    x = x.astype(float)

    # log term_j = K + j*s - lgamma(j+1) - lgamma(q+1+j)
    s = np.log(u) + np.log(x) - _LOG2
    K = math.log(2.0 * c) - u - 0.5 * x + q * np.log(x) - (q + 1.0) * _LOG2
    cut = math.log(1e-16)
    j_pass = float(np.max(u))  # the Poisson mode must be passed before cutting

    acc = np.full(u.shape, -np.inf)
    best = np.full(u.shape, -np.inf)
    for j in range(max_terms):
        lt = K + j * s - special.gammaln(j + 1.0) - special.gammaln(q + 1.0 + j)
        acc = np.logaddexp(acc, lt)
        best = np.maximum(best, lt)
        if j > j_pass and np.all(lt < best + cut):
            break
    else:
        raise NumericalError("transition-density series did not converge within 1e5 terms")

    out = np.exp(acc)
    if np.ndim(v_prev) == 0 and np.ndim(v) == 0:
        return float(out)
    return out


def ar1_summary_stats(y) -> np.ndarray:
    """Five summary statistics of a series (or rows of series).

    For y of length T (1-indexed):
    s1 = sum_{t=2}^{T-1} y_t          s2 = sum_{t=2}^{T-1} y_t^2
    s3 = sum_{t=2}^{T}   y_t y_{t-1}  s4 = y_1 + y_T
    s5 = y_1^2 + y_T^2

    Accepts shape (T,) or (R, T); the statistics land on the last axis.
    """
    y = np.asarray(y, dtype=float)
    if y.shape[-1] < 3:
        raise ParameterError("summary statistics need a series of length >= 3")
    mid = y[..., 1:-1]
    s1 = mid.sum(axis=-1)
    s2 = (mid**2).sum(axis=-1)
    s3 = (y[..., 1:] * y[..., :-1]).sum(axis=-1)
    s4 = y[..., 0] + y[..., -1]
    s5 = y[..., 0] ** 2 + y[..., -1] ** 2
    return np.stack([s1, s2, s3, s4, s5], axis=-1)

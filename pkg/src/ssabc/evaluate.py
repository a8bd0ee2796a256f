"""Reference posteriors, density estimation and accuracy summaries.

Reference ("exact") posterior marginals come from deterministic
integration: evaluate the likelihood times the (uniform) prior on a
tensor grid, normalise with trapezoid weights, and sum out the other
axes.  ABC output is turned into densities with a Gaussian KDE, and the
two are compared by root-mean-square error over the reference grid.
``replicate`` repeats a whole experiment over independent run streams
and aggregates per-method reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateSampleError, ParameterError, SupportError
from .rejection import parallel_map

__all__ = [
    "PosteriorGrid",
    "ReplicationReport",
    "MethodRunResult",
    "trapezoid_weights",
    "posterior_tensor_marginals",
    "exact_posterior",
    "kde",
    "rmse",
    "percentiles",
    "replicate",
]


@dataclass
class PosteriorGrid:
    """A normalised 1-d posterior marginal on an ordered grid."""

    param_index: int
    abscissae: np.ndarray
    ordinates: np.ndarray

    def __post_init__(self):
        self.abscissae = np.asarray(self.abscissae, dtype=float)
        self.ordinates = np.asarray(self.ordinates, dtype=float)
        if self.abscissae.ndim != 1 or self.abscissae.size < 2 or self.ordinates.shape != self.abscissae.shape:
            raise ParameterError("posterior grid needs matching 1-d abscissae/ordinates with >= 2 points")
        if not np.all(np.diff(self.abscissae) > 0.0):
            raise ParameterError("abscissae must be strictly increasing")
        if not np.all(np.isfinite(self.ordinates)) or np.any(self.ordinates < 0.0):
            raise ParameterError("ordinates must be finite and nonnegative")
        integral = float(np.trapezoid(self.ordinates, self.abscissae))
        if abs(integral - 1.0) > 1e-6:
            raise ParameterError(f"posterior grid integrates to {integral}, not 1")

    @classmethod
    def from_unnormalized(cls, param_index: int, abscissae, values) -> "PosteriorGrid":
        values = np.asarray(values, dtype=float)
        abscissae = np.asarray(abscissae, dtype=float)
        mass = float(np.trapezoid(values, abscissae))
        if not np.isfinite(mass) or mass <= 0.0:
            raise SupportError("cannot normalise: nonpositive or non-finite total mass")
        return cls(param_index, abscissae, values / mass)


@dataclass
class MethodRunResult:
    """One method's summaries from a single run."""

    rmse: np.ndarray  # (n_params,); NaN where the method does not report
    pct: np.ndarray  # (n_params, 5) accepted-draw percentiles
    epsilon: dict[str, float] = field(default_factory=dict)
    n_nonfinite: int = 0


@dataclass
class ReplicationReport:
    """Per-run and averaged summaries for one matching method."""

    method: str
    param_names: tuple[str, ...]
    rmse_runs: np.ndarray  # (n_runs, n_params)
    pct_runs: np.ndarray  # (n_runs, n_params, 5)
    mean_rmse: np.ndarray = field(init=False)  # (n_params,)

    def __post_init__(self):
        self.rmse_runs = np.asarray(self.rmse_runs, dtype=float)
        self.pct_runs = np.asarray(self.pct_runs, dtype=float)
        self.mean_rmse = self.rmse_runs.mean(axis=0)


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size == 1:
        return np.ones(1)
    w = np.empty_like(x)
    w[0] = 0.5 * (x[1] - x[0])
    w[-1] = 0.5 * (x[-1] - x[-2])
    w[1:-1] = 0.5 * (x[2:] - x[:-2])
    return w


def posterior_tensor_marginals(
    log_vals: np.ndarray, axes: Sequence[np.ndarray], param_indices: Sequence[int] | None = None
) -> list[PosteriorGrid]:
    """Marginals of exp(log_vals) over a tensor grid, trapezoid-normalised.

    ``axes[k]`` holds the grid for coordinate k; length-1 axes mark
    coordinates held fixed (weight 1).  Marginals are returned for
    ``param_indices`` (default: every non-degenerate axis).
    """
    log_vals = np.asarray(log_vals, dtype=float)
    axes = [np.asarray(a, dtype=float) for a in axes]
    if log_vals.shape != tuple(a.size for a in axes):
        raise ParameterError("log_vals shape does not match the axes")
    peak = float(np.max(log_vals))
    if not np.isfinite(peak):
        raise SupportError("likelihood is zero (or NaN) over the whole grid")
    dens = np.exp(log_vals - peak)
    if param_indices is None:
        param_indices = [k for k, a in enumerate(axes) if a.size > 1]
    out = []
    for j in param_indices:
        if axes[j].size < 2:
            raise ParameterError(f"coordinate {j} is fixed on this grid; no marginal to report")
        marg = dens
        for k in range(len(axes) - 1, -1, -1):
            if k == j:
                continue
            marg = np.tensordot(marg, trapezoid_weights(axes[k]), axes=([k], [0]))
        out.append(PosteriorGrid.from_unnormalized(j, axes[j], marg))
    return out


def exact_posterior(
    loglik_fn: Callable[[np.ndarray], float],
    axes: Sequence[np.ndarray],
    param_indices: Sequence[int] | None = None,
    threads: int = 1,
) -> list[PosteriorGrid]:
    """Reference marginals by evaluating ``loglik_fn(phi)`` over the tensor grid.

    Under a uniform (box) prior the posterior is the renormalised
    likelihood, so the prior enters only through the grid's extent.
    """
    axes = [np.asarray(a, dtype=float) for a in axes]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    vals = parallel_map(lambda p: float(loglik_fn(p)), pts, threads)
    log_vals = np.asarray(vals, dtype=float).reshape([a.size for a in axes])
    return posterior_tensor_marginals(log_vals, axes, param_indices)


def kde(draws: np.ndarray, grid: np.ndarray, param_index: int = 0) -> PosteriorGrid:
    """Gaussian kernel density of accepted draws, renormalised on the grid.

    Bandwidth is Silverman's rule with the robust spread:
    1.06 * min(std, IQR/1.34) * n^(-1/5).
    """
    draws = np.asarray(draws, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float)
    if draws.size < 20:
        raise ParameterError(f"kernel density needs >= 20 draws, got {draws.size}")
    sd = float(draws.std(ddof=1))
    q75, q25 = np.percentile(draws, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0.0:
        raise DegenerateSampleError("zero bandwidth: draws have no spread")
    h = 1.06 * spread * draws.size ** (-0.2)
    u = (grid[:, None] - draws[None, :]) / h
    dens = np.exp(-0.5 * u**2).sum(axis=1) / (draws.size * h * np.sqrt(2.0 * np.pi))
    return PosteriorGrid.from_unnormalized(param_index, grid, dens)


def rmse(est: PosteriorGrid, ref: PosteriorGrid) -> float:
    """Root-mean-square gap between two densities on the reference grid.

    If the grids differ, ``est`` is first resampled onto ``ref``'s
    abscissae by linear interpolation.
    """
    if est.abscissae.shape == ref.abscissae.shape and np.array_equal(est.abscissae, ref.abscissae):
        p_est = est.ordinates
    else:
        p_est = np.interp(ref.abscissae, est.abscissae, est.ordinates)
    if p_est.shape != ref.ordinates.shape:
        raise ParameterError("density grids do not align after resampling")
    return float(np.sqrt(np.mean((p_est - ref.ordinates) ** 2)))


def percentiles(draws: np.ndarray) -> tuple[float, float, float, float, float]:
    """The (5, 25, 50, 75, 95) empirical percentiles, type-7 interpolation."""
    draws = np.asarray(draws, dtype=float).ravel()
    if draws.size < 20:
        raise ParameterError(f"percentile summary needs >= 20 draws, got {draws.size}")
    return tuple(float(v) for v in np.percentile(draws, [5, 25, 50, 75, 95]))


def replicate(experiment, n_runs: int, threads: int = 1, progress=None) -> dict[str, ReplicationReport]:
    """Run an experiment ``n_runs`` times and aggregate per-method reports.

    ``experiment`` must expose ``param_names`` and
    ``run_once(run_index, threads) -> dict[method, MethodRunResult]``;
    the observed data stays fixed across runs, only the simulation
    streams change (run r uses replication streams keyed by r).
    """
    if n_runs < 1:
        raise ParameterError(f"need n_runs >= 1, got {n_runs}")
    per_run: list[dict[str, MethodRunResult]] = []
    for r in range(n_runs):
        per_run.append(experiment.run_once(r, threads=threads))
        if progress is not None:
            progress(r + 1, n_runs)
    methods = list(per_run[0].keys())
    names = tuple(experiment.param_names)
    reports = {}
    for m in methods:
        rmse_rows = np.stack([res[m].rmse for res in per_run])
        pct_rows = np.stack([res[m].pct for res in per_run])
        reports[m] = ReplicationReport(method=m, param_names=names, rmse_runs=rmse_rows, pct_runs=pct_rows)
    return reports

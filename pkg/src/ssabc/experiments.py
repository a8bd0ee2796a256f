"""End-to-end experiment assembly: data, anchors, references, method runs.

An :class:`Experiment` owns everything that is fixed across ABC runs of
one configuration — the observed series (stream key 0 of the seed), the
prior over the unknown coordinates, the auxiliary model with its fitted
anchors, and the reference posterior marginals.  ``run_once(r)`` then
executes every configured matching method against a simulation pool
shared across methods (run r uses replication streams keyed by r + 1),
so method comparisons see identical draws.

``run_table1`` arranges single/dual/triple-unknown volatility
experiments into the benchmark table layout (AUKF and Euler rows are
one-off filter-based posteriors, ABC rows are run averages).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .auxiliary import (
    AuxiliaryModel,
    JointScoreStatistic,
    MarginalScoreStatistic,
    fit_mle,
    heston_auxiliary_model,
    lg_auxiliary_model,
    marginal_mle,
    score,
    score_pool,
)
from .config import ExperimentConfig
from .errors import NumericalError, ParameterError
from .evaluate import (
    MethodRunResult,
    PosteriorGrid,
    exact_posterior,
    kde,
    percentiles,
    posterior_tensor_marginals,
    rmse,
)
from .filters import GridSpec, grid_filter_loglik, kalman_loglik_grid
from .models import (
    PARAM_NAMES,
    HestonParams,
    LgParams,
    UniformPrior,
    ar1_summary_stats,
    simulate_heston,
    simulate_lg,
)
from .rejection import (
    FpDistance,
    JointScoreDistance,
    MarginalScoreDistance,
    MleDistance,
    SummEuclidDistance,
    compute_distances,
    parallel_map,
    select_accepted,
    simulate_pool,
)
from .streams import stream

__all__ = ["MatchingUnit", "Experiment", "run_table1", "TABLE1_ROWS"]

# pilot runs get their own stream lane, far above any realistic run index
_PILOT_RUN_KEY = 1_000_003

TABLE1_ROWS = ("AUKF", "Euler", "ABC-Joint Score", "ABC-Marginal Score", "ABC-SS", "ABC-FP")
_METHOD_ROW = {
    "joint-score": "ABC-Joint Score",
    "marginal-score": "ABC-Marginal Score",
    "summ-euclid": "ABC-SS",
    "fp": "ABC-FP",
}


@dataclass
class MatchingUnit:
    """One acceptance problem: statistics, observed anchor, distance.

    ``coords`` lists the positions (into the free-coordinate order) whose
    posterior summaries are read off this unit's accepted draws.
    """

    key: str
    coords: tuple[int, ...]
    s_obs: np.ndarray
    stats: np.ndarray
    distance: object


class Experiment:
    """All fixed artifacts of one configuration, plus per-run execution."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.truth = cfg.truth()
        self.unknown = cfg.unknown_indices()
        self.n_free = len(self.unknown)
        self.param_names = cfg.unknown_params
        self._truth_vec = np.array([self.truth.rho, self.truth.delta, self.truth.sigma_v])
        self._working_prior: UniformPrior | None = None

        rng = stream(cfg.seed, 0)
        if cfg.model == "lg":
            self.latent, self.y = simulate_lg(self.truth, cfg.T, rng)
        else:
            self.latent, self.y = simulate_heston(self.truth, cfg.T, rng)

        lo_free, hi_free, constraint = self._free_box()
        self.prior = UniformPrior(lo_free, hi_free, constraint)
        fixed = {k: float(self._truth_vec[k]) for k in range(3) if k not in self.unknown}
        full_lo = np.asarray(cfg.prior_lower, dtype=float)
        full_hi = np.asarray(cfg.prior_upper, dtype=float)
        if cfg.model == "lg":
            self.aux: AuxiliaryModel = lg_auxiliary_model(
                self.truth.sigma_e, bounds=(full_lo, full_hi), fixed=fixed
            )
        else:
            self.aux = heston_auxiliary_model(bounds=(full_lo, full_hi), fixed=fixed)

    # ------------------------------------------------------------------
    # Prior geometry
    # ------------------------------------------------------------------

    def _free_box(self):
        """Free-coordinate box, with positivity/Feller folded in.

        When only one of (delta, sigma_v) is free the Feller condition
        is a plain interval restriction on that coordinate; only with
        both free does it stay a joint constraint.
        """
        lo = np.array([self.cfg.prior_lower[k] for k in self.unknown], dtype=float)
        hi = np.array([self.cfg.prior_upper[k] for k in self.unknown], dtype=float)
        if self.cfg.model != "heston":
            return lo, hi, None
        free = set(self.unknown)
        if 1 in free and 2 in free:
            pos_d = self.unknown.index(1)
            pos_s = self.unknown.index(2)

            def feller(phi):
                phi = np.asarray(phi, dtype=float)
                return 2.0 * phi[..., pos_d] >= phi[..., pos_s] ** 2

            return lo, hi, feller
        if 1 in free:  # delta free, sigma_v fixed
            pos = self.unknown.index(1)
            lo[pos] = max(lo[pos], self._truth_vec[2] ** 2 / 2.0)
        if 2 in free:  # sigma_v free, delta fixed
            pos = self.unknown.index(2)
            hi[pos] = min(hi[pos], np.sqrt(2.0 * self._truth_vec[1]))
        if not np.all(lo < hi):
            raise ParameterError("prior box is empty after the Feller restriction")
        return lo, hi, None

    def _expand(self, phi_free: np.ndarray) -> np.ndarray:
        full = self._truth_vec.copy()
        full[list(self.unknown)] = phi_free
        return full

    def _params_from(self, phi_free: np.ndarray):
        full = self._expand(np.asarray(phi_free, dtype=float))
        if self.cfg.model == "lg":
            return LgParams(full[0], full[1], full[2], sigma_e=self.truth.sigma_e)
        return HestonParams(full[0], full[1], full[2])

    def _simulator(self, phi, rng):
        params = self._params_from(phi)
        T_sim = self.cfg.T * self.cfg.abc.sim_multiplier
        if self.cfg.model == "lg":
            return simulate_lg(params, T_sim, rng)[1]
        return simulate_heston(params, T_sim, rng)[1]

    def _match_series(self, z: np.ndarray) -> np.ndarray:
        """The series summary statistics are computed on.

        Returns are squashed to ln(r^2) for the volatility model so the
        statistics see the same AR(1)-plus-noise shape as in the linear
        case; the linear model's measurements pass through unchanged.
        """
        if self.cfg.model == "lg":
            return z
        return np.log(np.maximum(np.asarray(z, dtype=float) ** 2, 1e-300))

    # ------------------------------------------------------------------
    # Observed-data anchors (computed once, reused by every run)
    # ------------------------------------------------------------------

    @cached_property
    def fitted(self):
        """Auxiliary MLE of the observed series, with the score weighting."""
        return fit_mle(self.aux, self.y)

    @cached_property
    def marginal_anchors(self) -> dict[int, float]:
        """Per free coordinate: maximiser of the observed integrated likelihood."""
        return {
            pos: marginal_mle(self.aux, self.y, pos, self.cfg.grids.nuisance_points, self.cfg.grids.marginal_mle_points)
            for pos in range(self.n_free)
        }

    # ------------------------------------------------------------------
    # Reference posteriors
    # ------------------------------------------------------------------

    def _reference_axes(self) -> list[np.ndarray]:
        axes = []
        for k in range(3):
            if k in self.unknown:
                pos = self.unknown.index(k)
                axes.append(np.linspace(self.prior.lower[pos], self.prior.upper[pos], self.cfg.grids.reference_points))
            else:
                axes.append(np.array([self._truth_vec[k]]))
        return axes

    @cached_property
    def reference(self) -> dict[int, PosteriorGrid]:
        """Exact posterior marginals, keyed by coordinate index (0..2)."""
        return self._posterior_rows("exact", threads=self.cfg.threads)

    def _posterior_rows(self, kind: str, threads: int = 1):
        """Posterior marginals for one likelihood evaluator.

        ``kind``: "exact" (KF for the linear model, grid filter with
        exact transitions for the volatility model), "euler" (grid
        filter, Gaussian transitions), or "aukf" (unscented filter).
        """
        axes = self._reference_axes()
        if self.cfg.model == "lg":
            if kind != "exact":
                raise ParameterError("approximate posterior rows are defined for the volatility model only")
            mesh = np.meshgrid(*axes, indexing="ij")
            log_vals = kalman_loglik_grid(
                self.y, mesh[0].ravel(), mesh[1].ravel(), mesh[2].ravel(), self.truth.sigma_e
            ).reshape(mesh[0].shape)
            marginals = posterior_tensor_marginals(log_vals, axes, list(self.unknown))
        elif kind == "aukf":
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([m.ravel() for m in mesh], axis=-1)
            betas = pts[:, list(self.unknown)]
            log_vals = np.asarray(self.aux.loglik_grid(self.y, betas), dtype=float)
            log_vals[~(2.0 * pts[:, 1] >= pts[:, 2] ** 2)] = -np.inf  # uniform prior imposes Feller
            marginals = posterior_tensor_marginals(log_vals.reshape(mesh[0].shape), axes, list(self.unknown))
        else:
            spec = GridSpec(self.cfg.grids.filter_points)
            transitions = "exact" if kind == "exact" else "euler"

            def loglik_fn(phi):
                try:
                    params = HestonParams(phi[0], phi[1], phi[2])
                except ParameterError:
                    return -np.inf
                return grid_filter_loglik(self.y, params, transitions, spec)

            marginals = exact_posterior(loglik_fn, axes, list(self.unknown), threads)
        return {g.param_index: g for g in marginals}

    def approx_posterior(self, kind: str, threads: int = 1):
        """AUKF- or Euler-based posterior marginals (volatility model only)."""
        if kind not in ("aukf", "euler"):
            raise ParameterError(f"kind must be 'aukf' or 'euler', got {kind!r}")
        return self._posterior_rows(kind, threads)

    # ------------------------------------------------------------------
    # Two-stage prior truncation
    # ------------------------------------------------------------------

    def working_prior(self, threads: int = 1) -> UniformPrior:
        """The prior final runs draw from; truncated by a pilot when configured.

        The pilot is one joint-score run at the 5% quantile on its own
        stream lane; the box spanned by its accepted draws, inflated by
        20% of its width per side and clipped to the base box, becomes
        the working prior.  Computed once and cached.
        """
        if not self.cfg.two_stage:
            return self.prior
        if self._working_prior is None:
            draws, Z = simulate_pool(
                self.prior, self._simulator, self.cfg.abc.R, self.cfg.seed, (_PILOT_RUN_KEY,), threads
            )
            stats = score_pool(self.aux, Z, self.fitted.beta_hat)
            s_obs = score(self.aux, self.y, self.fitted.beta_hat)
            distance = JointScoreDistance(self.fitted.sigma_weight)
            distances, _ = compute_distances(distance, s_obs, stats, draws)
            accepted, _ = select_accepted(distances, 0.05)
            kept = draws[accepted]
            width = kept.max(axis=0) - kept.min(axis=0)
            lo = np.maximum(kept.min(axis=0) - 0.2 * width, self.prior.lower)
            hi = np.minimum(kept.max(axis=0) + 0.2 * width, self.prior.upper)
            self._working_prior = UniformPrior(lo, hi, self.prior.joint_constraint)
        return self._working_prior

    # ------------------------------------------------------------------
    # Per-run execution
    # ------------------------------------------------------------------

    def run_pool(self, run_index: int, threads: int = 1):
        """The shared simulation pool of one run: draws (R, p), series (R, T)."""
        prior = self.working_prior(threads)
        return simulate_pool(prior, self._simulator, self.cfg.abc.R, self.cfg.seed, (run_index + 1,), threads)

    def method_units(self, method: str, Z: np.ndarray, threads: int = 1) -> list[MatchingUnit]:
        """The acceptance problems a method contributes, on one pool."""
        if method in ("summ-euclid", "fp"):
            stats = ar1_summary_stats(self._match_series(Z))
            s_obs = ar1_summary_stats(self._match_series(self.y))
            if method == "summ-euclid":
                return [MatchingUnit("summ-euclid", tuple(range(self.n_free)), s_obs, stats, SummEuclidDistance())]
            return [
                MatchingUnit(
                    f"fp[{self.param_names[pos]}]",
                    (pos,),
                    s_obs,
                    stats,
                    FpDistance(pos, self.cfg.abc.fp_split_pilot),
                )
                for pos in range(self.n_free)
            ]
        if method == "joint-score":
            stat = JointScoreStatistic(self.aux, self.fitted.beta_hat)
            return [
                MatchingUnit(
                    "joint-score",
                    tuple(range(self.n_free)),
                    stat(self.y),
                    stat.batch(Z),
                    JointScoreDistance(self.fitted.sigma_weight),
                )
            ]
        if method == "marginal-score":
            units = []
            for pos in range(self.n_free):
                stat = MarginalScoreStatistic(self.aux, pos, self.marginal_anchors[pos], self.cfg.grids.nuisance_points)
                units.append(
                    MatchingUnit(
                        f"marginal-score[{self.param_names[pos]}]",
                        (pos,),
                        stat(self.y),
                        stat.batch(Z),
                        MarginalScoreDistance(),
                    )
                )
            return units
        if method == "mle":
            def one(z):
                try:
                    return fit_mle(self.aux, z).beta_hat
                except NumericalError:
                    return np.full(self.n_free, np.nan)

            stats = np.stack(parallel_map(one, Z, threads))
            return [
                MatchingUnit(
                    "mle",
                    tuple(range(self.n_free)),
                    self.fitted.beta_hat,
                    stats,
                    MleDistance(self.fitted.neg_hess),
                )
            ]
        raise ParameterError(f"unknown method {method!r}")

    def run_once(self, run_index: int, threads: int = 1) -> dict[str, MethodRunResult]:
        """Every configured method on the shared pool of run ``run_index``."""
        draws, Z = self.run_pool(run_index, threads)
        results: dict[str, MethodRunResult] = {}
        for method in self.cfg.methods:
            rmse_vec = np.full(self.n_free, np.nan)
            pct = np.full((self.n_free, 5), np.nan)
            eps: dict[str, float] = {}
            n_nonfinite = 0
            for unit in self.method_units(method, Z, threads):
                distances, nnf = compute_distances(unit.distance, unit.s_obs, unit.stats, draws)
                accepted, epsilon = select_accepted(distances, self.cfg.abc.accept_quantile)
                eps[unit.key] = epsilon
                n_nonfinite += nnf
                for pos in unit.coords:
                    coord = self.unknown[pos]
                    ref = self.reference[coord]
                    col = draws[accepted, pos]
                    est = kde(col, ref.abscissae, coord)
                    rmse_vec[pos] = rmse(est, ref)
                    pct[pos] = percentiles(col)
            results[method] = MethodRunResult(rmse=rmse_vec, pct=pct, epsilon=eps, n_nonfinite=n_nonfinite)
        return results


# ---------------------------------------------------------------------------
# Benchmark-table assembly
# ---------------------------------------------------------------------------


def _panel_variants(cfg: ExperimentConfig, panel: str) -> list[ExperimentConfig]:
    if panel == "A":
        return [
            replace(cfg, unknown_params=(name,), methods=("marginal-score", "summ-euclid", "fp"), two_stage=False)
            for name in PARAM_NAMES
        ]
    unknown = {"B": ("rho", "sigma_v"), "C": ("rho", "delta"), "D": PARAM_NAMES}[panel]
    return [
        replace(
            cfg,
            unknown_params=unknown,
            methods=("joint-score", "marginal-score", "summ-euclid", "fp"),
            two_stage=True,
        )
    ]


def run_table1(cfg: ExperimentConfig, threads: int = 1, progress=None) -> dict:
    """Average-RMSE table for the volatility model, panel by panel.

    Returns {panel: {"columns": [...], "rows": {row: [values]}}} where a
    value of None marks a cell the method does not produce (the joint
    score in single-unknown panels).
    """
    if cfg.model != "heston":
        raise ParameterError("the benchmark table is defined for the volatility model")
    from .evaluate import replicate  # local import keeps module load cheap

    table: dict[str, dict] = {}
    for panel in cfg.table1_panels:
        columns: list[str] = []
        cells: dict[str, list] = {row: [] for row in TABLE1_ROWS}
        for variant in _panel_variants(cfg, panel):
            exp = Experiment(variant)
            columns.extend(variant.unknown_params)
            # Table cells are density RMSE x reference grid spacing: mass per
            # grid point, the only units in which the published magnitudes
            # are reproducible.  Orderings are unaffected (common scale per
            # column).
            dx = {c: float(exp.reference[c].abscissae[1] - exp.reference[c].abscissae[0]) for c in exp.unknown}
            for kind, row in (("aukf", "AUKF"), ("euler", "Euler")):
                approx = exp.approx_posterior(kind, threads)
                for coord in exp.unknown:
                    cells[row].append(rmse(approx[coord], exp.reference[coord]) * dx[coord])
            reports = replicate(
                exp,
                variant.n_runs,
                threads=threads,
                progress=(lambda done, total, p=panel: progress(p, done, total)) if progress else None,
            )
            for method, row in _METHOD_ROW.items():
                if method in reports:
                    cells[row].extend(float(v) * dx[exp.unknown[pos]] for pos, v in enumerate(reports[method].mean_rmse))
                else:
                    cells[row].extend([None] * exp.n_free)
        table[panel] = {"columns": columns, "rows": cells}
    return table

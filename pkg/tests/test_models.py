import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from ssabc.errors import DegeneratePriorError, NumericalError, ParameterError
from ssabc.models import (
    HestonParams,
    LgParams,
    UniformPrior,
    ar1_summary_stats,
    cir_sample_transition,
    cir_transition_density,
    simulate_heston,
    simulate_lg,
)
from ssabc.streams import stream

from conftest import random_lg_params


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


class TestLgParams:
    def test_rejects_nonstationary_rho(self):
        with pytest.raises(ParameterError):
            LgParams(rho=1.0, delta=0.0, sigma_v=1.0, sigma_e=1.0)
        with pytest.raises(ParameterError):
            LgParams(rho=-1.01, delta=0.0, sigma_v=1.0, sigma_e=1.0)

    def test_rejects_nonpositive_scales(self):
        with pytest.raises(ParameterError):
            LgParams(rho=0.5, delta=0.0, sigma_v=0.0, sigma_e=1.0)
        with pytest.raises(ParameterError):
            LgParams(rho=0.5, delta=0.0, sigma_v=1.0, sigma_e=-0.5)

    def test_rejects_nonfinite(self):
        with pytest.raises(ParameterError):
            LgParams(rho=0.5, delta=float("nan"), sigma_v=1.0, sigma_e=1.0)

    def test_stationary_moments(self):
        p = LgParams(rho=0.5, delta=1.0, sigma_v=2.0, sigma_e=1.0)
        assert p.stationary_mean == pytest.approx(2.0)
        assert p.stationary_var == pytest.approx(4.0 / 0.75)

    def test_from_sn_ratio_sets_sigma_e(self):
        p = LgParams.from_sn_ratio(0.7, 0.1, 1.0, 20.0)
        assert p.stationary_var / p.sigma_e**2 == pytest.approx(20.0)


class TestHestonParams:
    def test_feller_violation_rejected(self):
        with pytest.raises(ParameterError):
            HestonParams(rho=0.9, delta=0.001, sigma_v=0.1)  # 2*0.001 < 0.01

    def test_domain_checks(self):
        with pytest.raises(ParameterError):
            HestonParams(rho=1.0, delta=0.01, sigma_v=0.05)
        with pytest.raises(ParameterError):
            HestonParams(rho=0.9, delta=-0.01, sigma_v=0.05)

    def test_derived_quantities(self, heston_paper):
        p = heston_paper
        assert p.alpha == pytest.approx(0.08)
        assert p.stationary_mean == pytest.approx(0.03)
        assert p.stationary_var == pytest.approx(p.sigma_v**2 * p.delta / (2 * p.alpha**2))
        # 2c V_t | V_{t-1} is noncentral chi-squared; c and q per the
        # unit-interval transition of the square-root diffusion.
        assert p.c == pytest.approx(2 * p.alpha / (p.sigma_v**2 * (1 - math.exp(-p.alpha))))
        assert p.q == pytest.approx(2 * p.delta / p.sigma_v**2 - 1)


# ---------------------------------------------------------------------------
# linear Gaussian simulator
# ---------------------------------------------------------------------------


def test_simulate_lg_sample_variance_matches_theory(lg_paper):
    # var(y) = sigma_x^2 + sigma_e^2 = 1/(1-0.49) * (1 + 1/20) ~ 2.059
    target = lg_paper.stationary_var + lg_paper.sigma_e**2
    assert target == pytest.approx(2.059, abs=5e-3)
    vs = []
    for s in range(10):
        _, y = simulate_lg(lg_paper, 400, stream(500 + s, 0))
        vs.append(y.var())
    # MC error of a sample variance under this much autocorrelation is
    # ~0.35 per series; averaging 10 series brings 3 SE near 0.33.
    assert np.mean(vs) == pytest.approx(target, abs=0.35)


def test_simulate_lg_degenerate_noise_collapses_to_zero():
    p = LgParams(rho=0.5, delta=0.0, sigma_v=1e-12, sigma_e=1e-12)
    _, y = simulate_lg(p, 200, stream(1, 0))
    assert np.max(np.abs(y)) < 1e-9


def test_simulate_lg_deterministic(lg_paper):
    x1, y1 = simulate_lg(lg_paper, 100, stream(3, 0))
    x2, y2 = simulate_lg(lg_paper, 100, stream(3, 0))
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)


def test_simulate_lg_rejects_short_series(lg_paper):
    with pytest.raises(ParameterError):
        simulate_lg(lg_paper, 1, stream(0, 0))


@pytest.mark.invariant
def test_simulate_lg_initial_state_is_stationary(lg_paper):
    # 1e5 replications of x_1 via the simulator itself.
    x1 = np.array([simulate_lg(lg_paper, 2, stream(9000, i))[0][0] for i in range(100_000)])
    se_mean = math.sqrt(lg_paper.stationary_var / x1.size)
    assert abs(x1.mean() - lg_paper.stationary_mean) < 4 * se_mean
    # SE of the sample variance of n iid normals: var * sqrt(2/(n-1)).
    se_var = lg_paper.stationary_var * math.sqrt(2.0 / (x1.size - 1))
    assert abs(x1.var(ddof=1) - lg_paper.stationary_var) < 4 * se_var


# ---------------------------------------------------------------------------
# Heston simulator and CIR transition machinery
# ---------------------------------------------------------------------------


def _ncx2_of(v_prev, p: HestonParams):
    """The transition in scipy terms: 2c V ~ ncx2(2q+2, 2u). Independent oracle."""
    u = p.c * p.exp_neg_alpha * v_prev
    return stats.ncx2(df=2 * p.q + 2, nc=2 * u), u


def test_simulate_heston_stationary_moments_smoke(heston_paper):
    # Trimmed version of the long-run check (the full T=1e6 run lives in
    # the acceptance suite); batch-means standard errors from the path.
    V, r = simulate_heston(heston_paper, 200_000, stream(11, 0))
    bm = V.reshape(100, -1).mean(axis=1)
    se = bm.std(ddof=1) / math.sqrt(bm.size)
    assert abs(V.mean() - 0.03) < 4 * se
    assert r.shape == V.shape
    assert np.all(V > 0)


def test_simulate_heston_vanishing_diffusion_tracks_fixed_point():
    p = HestonParams(rho=0.5, delta=0.03, sigma_v=1e-8)
    V, _ = simulate_heston(p, 100, stream(12, 0))
    # stationary mean delta/alpha = 0.06 is the fixed point of the
    # deterministic recursion; vanishing vol-of-vol pins the path there
    assert np.max(np.abs(V - 0.06)) < 1e-4


def test_simulate_heston_deterministic(heston_paper):
    V1, r1 = simulate_heston(heston_paper, 300, stream(13, 0))
    V2, r2 = simulate_heston(heston_paper, 300, stream(13, 0))
    assert np.array_equal(V1, V2) and np.array_equal(r1, r2)


def test_simulate_heston_is_fold_of_single_transitions(heston_paper):
    # A path must be exactly what repeated one-step draws produce from
    # the same stream, with the initial gamma draw first.
    T = 120
    V, _ = simulate_heston(heston_paper, T, stream(14, 0))
    rng = stream(14, 0)
    v = rng.gamma(heston_paper.stationary_gamma_shape, heston_paper.stationary_gamma_scale)
    path = [v]
    for _ in range(T - 1):
        path.append(cir_sample_transition(path[-1], heston_paper, rng))
    assert np.array_equal(V, np.array(path))


def test_cir_sampler_conditional_moments(heston_paper):
    p = heston_paper
    v_prev = p.stationary_mean  # 0.03
    oracle, u = _ncx2_of(v_prev, p)
    mean_cf = v_prev * p.exp_neg_alpha + p.stationary_mean * (1 - p.exp_neg_alpha)
    var_cf = (
        v_prev * (p.sigma_v**2 / p.alpha) * (p.exp_neg_alpha - p.exp_neg_alpha**2)
        + p.delta * p.sigma_v**2 * (1 - p.exp_neg_alpha) ** 2 / (2 * p.alpha**2)
    )
    # the two closed forms (diffusion moments vs noncentral chi-squared
    # moments) must agree before either is used as the oracle
    assert mean_cf == pytest.approx(oracle.mean() / (2 * p.c), rel=1e-12)
    assert var_cf == pytest.approx(oracle.var() / (2 * p.c) ** 2, rel=1e-12)

    n = 1_000_000
    draws = cir_sample_transition(np.full(n, v_prev), p, stream(15, 0))
    se_mean = draws.std(ddof=1) / math.sqrt(n)
    assert abs(draws.mean() - mean_cf) < 3 * se_mean
    centered = draws - draws.mean()
    m4 = np.mean(centered**4)
    se_var = math.sqrt((m4 - draws.var() ** 2) / n)
    assert abs(draws.var(ddof=1) - var_cf) < 3 * se_var


def test_cir_sampler_concentrates_when_vol_of_vol_vanishes():
    p = HestonParams(rho=0.5, delta=0.03, sigma_v=1e-4)
    draws = cir_sample_transition(np.full(2000, 0.06), p, stream(16, 0))
    assert draws.std() / draws.mean() < 1e-2


def test_cir_sampler_histogram_matches_density(heston_paper):
    p = heston_paper
    v_prev = 0.03
    n = 1_000_000
    draws = cir_sample_transition(np.full(n, v_prev), p, stream(17, 0))
    oracle, _ = _ncx2_of(v_prev, p)
    qs = oracle.ppf(np.linspace(0.001, 0.999, 41)) / (2 * p.c)
    counts, _ = np.histogram(draws, bins=qs)
    cdf = oracle.cdf(qs * 2 * p.c)
    pbin = np.diff(cdf)
    expected = n * pbin
    slack = 3 * np.sqrt(n * pbin * (1 - pbin))
    assert np.all(np.abs(counts - expected) <= slack)


def test_cir_sampler_rejects_nonpositive_state(heston_paper):
    with pytest.raises(ParameterError):
        cir_sample_transition(0.0, heston_paper, stream(18, 0))


def test_cir_density_integrates_to_one(heston_paper):
    for v_prev in (0.005, 0.03, 0.12):
        val, err = integrate.quad(
            lambda v: cir_transition_density(v, v_prev, heston_paper),
            1e-12, 1.0, limit=300,
        )
        assert err < 1e-8
        assert val == pytest.approx(1.0, abs=1e-6)


def test_cir_density_mean_identity(heston_paper):
    p = heston_paper
    v_prev = 0.03
    val, err = integrate.quad(
        lambda v: v * cir_transition_density(v, v_prev, p), 1e-12, 1.0, limit=300
    )
    target = v_prev * p.exp_neg_alpha + p.stationary_mean * (1 - p.exp_neg_alpha)
    assert err < 1e-9
    assert val == pytest.approx(target, abs=1e-6)


def test_cir_density_agrees_with_bessel_form(heston_paper):
    # Direct closed form: p(v|v') = c e^{-u-x/2} (x/2u)^{q/2} I_q(sqrt(2ux)),
    # x = 2cv, evaluated through the scaled Bessel function ive for stability.
    p = heston_paper
    v = v_prev = 0.03
    u = p.c * p.exp_neg_alpha * v_prev
    x = 2 * p.c * v
    z = math.sqrt(2 * u * x)
    log_bessel = math.log(p.c) - u - 0.5 * x + 0.5 * p.q * (math.log(x) - math.log(2 * u))
    log_bessel += math.log(special.ive(p.q, z)) + z
    mine = cir_transition_density(v, v_prev, p)
    assert mine == pytest.approx(math.exp(log_bessel), rel=1e-8)


def test_cir_density_series_cap_raises(heston_paper):
    with pytest.raises(NumericalError):
        cir_transition_density(0.03, 0.03, heston_paper, max_terms=3)


def test_cir_density_rejects_nonpositive_arguments(heston_paper):
    with pytest.raises(ParameterError):
        cir_transition_density(-0.01, 0.03, heston_paper)
    with pytest.raises(ParameterError):
        cir_transition_density(0.01, 0.0, heston_paper)


@pytest.mark.invariant
def test_cir_sampler_vs_density_ks(heston_paper):
    p = heston_paper
    v_prev = 0.03
    draws = cir_sample_transition(np.full(100_000, v_prev), p, stream(19, 0))
    oracle, _ = _ncx2_of(v_prev, p)
    stat, pvalue = stats.kstest(draws * 2 * p.c, oracle.cdf)
    # 1% critical value for the one-sample KS statistic
    assert stat < 1.6276 / math.sqrt(draws.size)
    assert pvalue > 0.01


@pytest.mark.invariant
def test_simulators_are_pure(lg_paper, heston_paper):
    a = simulate_lg(lg_paper, 50, stream(20, 0))
    b = simulate_lg(lg_paper, 50, stream(20, 0))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = simulate_heston(heston_paper, 50, stream(21, 0))
    d = simulate_heston(heston_paper, 50, stream(21, 0))
    assert all(np.array_equal(x, y) for x, y in zip(c, d))


# ---------------------------------------------------------------------------
# summary statistics
# ---------------------------------------------------------------------------


def test_summary_stats_constant_series():
    assert np.array_equal(ar1_summary_stats([1.0, 1.0, 1.0, 1.0]), [2, 2, 3, 2, 2])


def test_summary_stats_zero_series():
    assert np.array_equal(ar1_summary_stats(np.zeros(10)), np.zeros(5))


def test_summary_stats_hand_example():
    assert np.array_equal(ar1_summary_stats([1.0, 2.0, 3.0]), [2, 4, 8, 4, 10])


def test_summary_stats_length_check():
    with pytest.raises(ParameterError):
        ar1_summary_stats([1.0, 2.0])


def test_summary_stats_batch_rows_match_single():
    rng = stream(22, 0)
    Y = rng.normal(size=(7, 30))
    batch = ar1_summary_stats(Y)
    for i in range(7):
        assert np.array_equal(batch[i], ar1_summary_stats(Y[i]))


@pytest.mark.invariant
def test_summary_stats_scaling_covariance(rng0):
    y = rng0.normal(size=50)
    k = 3.7
    s1 = ar1_summary_stats(y)
    s2 = ar1_summary_stats(k * y)
    scale = np.array([k, k**2, k**2, k, k**2])
    assert np.allclose(s2, scale * s1, rtol=1e-12)


# ---------------------------------------------------------------------------
# uniform prior
# ---------------------------------------------------------------------------


class TestUniformPrior:
    def test_box_moments(self):
        prior = UniformPrior(np.zeros(2), np.ones(2))
        draws = prior.sample(stream(23, 0), size=100_000)
        se = 1.0 / math.sqrt(12 * draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - 0.5) < 3 * se)

    def test_constraint_always_enforced(self):
        feller = lambda phi: 2.0 * phi[..., 1] >= phi[..., 2] ** 2
        prior = UniformPrior(
            np.array([0.5, 1e-4, 0.01]), np.array([0.999, 0.01, 0.15]), joint_constraint=feller
        )
        draws = prior.sample(stream(24, 0), size=5000)
        assert np.all(2.0 * draws[:, 1] >= draws[:, 2] ** 2)
        one = prior.sample(stream(25, 0))
        assert 2.0 * one[1] >= one[2] ** 2

    def test_near_degenerate_box(self):
        lo = np.array([0.5])
        prior = UniformPrior(lo, lo + 1e-12)
        draw = prior.sample(stream(26, 0))
        assert lo[0] <= draw[0] <= lo[0] + 1e-12

    def test_contains(self):
        prior = UniformPrior(np.zeros(2), np.ones(2))
        assert prior.contains([0.5, 0.5])
        assert not prior.contains([1.5, 0.5])

    def test_impossible_constraint_raises(self):
        prior = UniformPrior(np.zeros(1), np.ones(1), joint_constraint=lambda phi: phi[..., 0] > 2)
        with pytest.raises(DegeneratePriorError):
            prior.sample(stream(27, 0))
        with pytest.raises(DegeneratePriorError):
            prior.sample(stream(28, 0), size=3)

    def test_bad_bounds_rejected(self):
        with pytest.raises(ParameterError):
            UniformPrior(np.ones(2), np.zeros(2))


def test_random_lg_params_are_valid():
    rng = stream(29, 0)
    for _ in range(20):
        random_lg_params(rng)  # constructor validates

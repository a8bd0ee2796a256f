import numpy as np
import pytest
from scipy import stats

from ssabc.models import HestonParams, LgParams
from ssabc.streams import stream


@pytest.fixture(scope="session")
def lg_paper() -> LgParams:
    """Truth for the linear Gaussian experiments: (0.7, 0.1, 1.0), SN ratio 20."""
    return LgParams.from_sn_ratio(0.7, 0.1, 1.0, 20.0)


@pytest.fixture(scope="session")
def heston_paper() -> HestonParams:
    return HestonParams(rho=0.92, delta=0.0024, sigma_v=0.062)


def mvn_lg_loglik(y, p: LgParams) -> float:
    """Brute-force oracle: the LG series is jointly Gaussian.

    y ~ N(mu 1, Sigma_x + sigma_e^2 I) with Sigma_x the AR(1) Toeplitz
    covariance sigma_x^2 rho^{|i-j|}.  O(T^3), fine for small T.
    """
    y = np.asarray(y, dtype=float)
    T = y.size
    idx = np.arange(T)
    cov_x = p.stationary_var * p.rho ** np.abs(idx[:, None] - idx[None, :])
    cov = cov_x + p.sigma_e**2 * np.eye(T)
    mean = np.full(T, p.stationary_mean)
    return float(stats.multivariate_normal(mean=mean, cov=cov).logpdf(y))


def random_lg_params(rng: np.random.Generator) -> LgParams:
    return LgParams(
        rho=rng.uniform(-0.95, 0.95),
        delta=rng.uniform(-1.0, 1.0),
        sigma_v=rng.uniform(0.2, 2.0),
        sigma_e=rng.uniform(0.2, 2.0),
    )


@pytest.fixture()
def rng0() -> np.random.Generator:
    return stream(12345, 0)

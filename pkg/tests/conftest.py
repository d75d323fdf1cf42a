import numpy as np
import pytest

from shifteval import LinearPolicy, SimulationConfig

# linear outcome: Q(x, a) = 1 + x1 + 0.5 x2 + a (0.25 + 0.5 x1 - 0.5 x2)
DEFAULT_COEFFS = np.array([1.0, 1.0, 0.5, 0.25, 0.5, -0.5])


def make_config(
    p=2,
    mu=(0.5, 0.5),
    rho_s=0.5,
    n=2000,
    outcome_coeffs=None,
    noise_sd=1.0,
    propensity=0.5,
    seed=0,
):
    if outcome_coeffs is None:
        outcome_coeffs = DEFAULT_COEFFS if p == 2 else np.ones(2 * p + 2)
    return SimulationConfig(
        p=p,
        mu=np.asarray(mu, dtype=float),
        rho_s=rho_s,
        n=n,
        outcome_coeffs=np.asarray(outcome_coeffs, dtype=float),
        noise_sd=noise_sd,
        propensity=propensity,
        seed=seed,
    )


@pytest.fixture
def policy():
    return LinearPolicy(0.2, np.array([1.0, -1.0]))

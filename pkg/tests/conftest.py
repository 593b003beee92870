import numpy as np
import pytest

from noveldet.nn import RngStream


@pytest.fixture
def rng():
    return RngStream(12345)


def kalman_loglik(x, a, c, q, r, mu0, p0):
    """Exact log p(x_{1:T}) of a 1-D linear-Gaussian state-space model.

    z_t = a z_{t-1} + w,  w ~ N(0, q);  x_t = c z_t + v,  v ~ N(0, r);
    z_1 ~ N(mu0, p0). Standard recursive filter over the prediction
    densities.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    ll = 0.0
    mean, var = mu0, p0
    for t, xt in enumerate(x):
        if t > 0:
            mean = a * mean
            var = a * a * var + q
        # predictive density of x_t
        s = c * c * var + r
        ll += -0.5 * (np.log(2 * np.pi * s) + (xt - c * mean) ** 2 / s)
        # measurement update
        k = c * var / s
        mean = mean + k * (xt - c * mean)
        var = (1 - k * c) * var
    return ll


def sample_lgssm(n_steps, a, c, q, r, mu0, p0, rng):
    """Draw one observation sequence from the same model."""
    z = mu0 + np.sqrt(p0) * rng.normal()
    xs = np.empty(n_steps)
    for t in range(n_steps):
        if t > 0:
            z = a * z + np.sqrt(q) * rng.normal()
        xs[t] = c * z + np.sqrt(r) * rng.normal()
    return xs

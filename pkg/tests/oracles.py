"""Independent reference computations shared by the test modules."""

import numpy as np

from cdvae.model import LossWeights, cdvae_objective

# Entries whose analytic and numeric gradients are both below this are compared
# absolutely; otherwise finite-difference noise dominates the relative error.
GRAD_FLOOR = 1e-6


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def objective_fd(params, x_sp, x_mcc, speakers, noise, weights: LossWeights, h: float = 1e-5, **kw):
    """Numeric gradient of the weighted total, one array per parameter name."""

    def total():
        return cdvae_objective(params, x_sp, x_mcc, speakers, None, weights, noise=noise, **kw).total

    return {name: fd_gradient(total, params.store[name], h) for name in params.store.names()}


def kl_monte_carlo(mu: np.ndarray, log_var: np.ndarray, n: int, rng: np.random.Generator) -> float:
    """E_q[log q(z) - log p(z)] for diagonal q = N(mu, exp(log_var)), p = N(0, I), by sampling."""
    sigma = np.exp(0.5 * log_var)
    eps = rng.standard_normal((n, mu.size))
    z = mu + sigma * eps
    log_q = -0.5 * (eps ** 2 + log_var + np.log(2 * np.pi)).sum(axis=1)
    log_p = -0.5 * (z ** 2 + np.log(2 * np.pi)).sum(axis=1)
    return float(np.mean(log_q - log_p))

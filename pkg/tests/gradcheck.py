"""Finite-difference gradient oracle shared by the nn and defense tests.

Kept independent of the analytic backprop code paths on purpose: the only
thing reused from the package is the forward computation under test.
"""

import numpy as np


def finite_difference_grad(f, x, h=1e-4):
    """Central differences of a scalar function at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        up = f(x)
        xf[i] = orig - h
        down = f(x)
        xf[i] = orig
        flat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    """Norm-relative disagreement between two gradient arrays."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)

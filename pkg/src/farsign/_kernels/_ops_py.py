"""Pure-numpy kernel implementations.

Interface contract shared with the compiled core:

  * signed_update / y_update mutate their arrays in place; index arrays
    hold unique coordinates.
  * batch_values_native consumes the random stream in the same order as
    the scalar loop in the compiled core (vectorized fills of a numpy
    Generator produce the identical draw sequence).
  * sign(0) is 0, so a zero server memory entry moves nothing.
"""

from __future__ import annotations

import numpy as np


def signed_update(x, alpha, idx, w, y):
    """x[i] += alpha * w[i] * sign(-y[i]) for each i in idx."""
    x[idx] += alpha * w[idx] * -np.sign(y[idx])


def y_update(y, beta, idx, vals):
    """y[i] += beta * (vals[j] - y[i]) for each pair (j, i=idx[j])."""
    y[idx] += beta * (vals - y[idx])


def batch_values_native(kind, q, c, rho, x, idx, order, sigma, zeta_std, coupled, lam, rng, out):
    """Directional feedback values for the separable native objectives.

    kind 1: f(x) = sum 0.5 q_i x_i^2 + c_i x_i
    kind 2: f(x) = sum 0.5 x_i^2 + rho sin^2(x_i)

    order 0 is first-order feedback g_i + sigma * xi_i with xi drawn over
    the full dimension per call; order 1 is the two-point difference at
    radius lam, restricted to coordinate i (the objectives are separable,
    so off-coordinate terms cancel exactly).  Decoupled zeroth-order noise
    draws (zeta1, zeta2) per direction; coupled noise cancels and draws
    nothing.
    """
    k = len(idx)
    xi = x[idx]
    if order == 0:
        if kind == 1:
            g = q[idx] * xi + c[idx]
        else:
            g = xi + rho * np.sin(2.0 * xi)
        if sigma > 0:
            noise = rng.standard_normal((k, len(x)))
            g = g + sigma * noise[np.arange(k), idx]
        out[:] = g
    else:
        up = xi + lam
        dn = xi - lam
        if kind == 1:
            fd = 0.5 * q[idx] * (up * up - dn * dn) + c[idx] * (2.0 * lam)
        else:
            su = np.sin(up)
            sd = np.sin(dn)
            fd = 0.5 * (up * up - dn * dn) + rho * (su * su - sd * sd)
        g = fd / (2.0 * lam)
        if not coupled and zeta_std > 0:
            z = rng.standard_normal((k, 2))
            g = g + zeta_std * (z[:, 0] - z[:, 1]) / (2.0 * lam)
        out[:] = g


def native_grad_l1(kind, q, c, rho, x):
    """l1 norm of the exact gradient of a native objective."""
    if kind == 1:
        g = q * x + c
    else:
        g = x + rho * np.sin(2.0 * x)
    return float(np.abs(g).sum())

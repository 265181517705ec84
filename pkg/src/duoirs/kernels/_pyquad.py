"""Pure-numpy implementations of the phase-optimizer hot kernels.

Same contracts as the compiled module `_quadcore`; selected automatically
when the extension is unavailable (or forced via DUOIRS_KERNELS=python).
Exponents of the smoothed-penalty terms are clipped at EXP_CLIP so an
infeasible probe saturates instead of overflowing.
"""

import numpy as np

EXP_CLIP = 600.0


def quad_values(u, q, theta):
    """x_l = Re(theta^H U_l theta) + 2 Re(theta^H q_l) for all l."""
    tc = theta.conj()
    mat = u @ theta
    return np.real(mat @ tc) + 2.0 * np.real(q @ tc)


def penalized_value(u, q, weights, gts, theta, rho, mu):
    x = quad_values(u, q, theta)
    val = float(weights @ x)
    if rho != 0.0:
        e = np.exp(np.minimum(mu * (x - gts), EXP_CLIP))
        val += rho * (e.sum() - len(x))
    return val


def penalized_value_grad(u, q, weights, gts, theta, rho, mu):
    tc = theta.conj()
    mat = u @ theta  # (L, M)
    x = np.real(mat @ tc) + 2.0 * np.real(q @ tc)
    val = float(weights @ x)
    coeff = weights.astype(float).copy()
    if rho != 0.0:
        e = np.exp(np.minimum(mu * (x - gts), EXP_CLIP))
        val += rho * (e.sum() - len(x))
        coeff = coeff + rho * mu * e
    grad = 2.0 * (coeff @ (mat + q))
    return val, grad


def retract_value(u, q, weights, gts, theta, d, t, rho, mu):
    """Retract theta along t*d and evaluate; ok=False flags a degenerate
    |theta + t*d| entry (caller shrinks the step)."""
    cand = theta + t * d
    mags = np.abs(cand)
    if np.any(mags < 1e-14):
        return np.inf, theta, False
    cand = cand / mags
    return penalized_value(u, q, weights, gts, cand, rho, mu), cand, True

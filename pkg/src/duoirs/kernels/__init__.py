"""Hot-kernel backend selection.

The compiled extension is preferred when importable; `DUOIRS_KERNELS=python`
forces the numpy fallback, `DUOIRS_KERNELS=compiled` errors if the extension
is missing. `BACKEND` names the active implementation.
"""

import os

import numpy as np

_choice = os.environ.get("DUOIRS_KERNELS", "auto").lower()

if _choice in ("python", "py"):
    from . import _pyquad as _impl

    BACKEND = "python"
elif _choice == "compiled":
    from . import _quadcore as _impl  # noqa: F401

    BACKEND = "compiled"
else:
    try:
        from . import _quadcore as _impl

        BACKEND = "compiled"
    except ImportError:
        from . import _pyquad as _impl

        BACKEND = "python"


def _c128(a):
    return np.ascontiguousarray(a, dtype=np.complex128)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def quad_values(u, q, theta):
    """Per-user quadratic-form values Re(theta^H U_l theta + 2 theta^H q_l)."""
    return _impl.quad_values(_c128(u), _c128(q), _c128(theta))


def penalized_value(u, q, weights, gts, theta, rho, mu):
    return _impl.penalized_value(
        _c128(u), _c128(q), _f64(weights), _f64(gts), _c128(theta), float(rho), float(mu)
    )


def penalized_value_grad(u, q, weights, gts, theta, rho, mu):
    return _impl.penalized_value_grad(
        _c128(u), _c128(q), _f64(weights), _f64(gts), _c128(theta), float(rho), float(mu)
    )


def retract_value(u, q, weights, gts, theta, d, t, rho, mu):
    return _impl.retract_value(
        _c128(u), _c128(q), _f64(weights), _f64(gts), _c128(theta), _c128(d),
        float(t), float(rho), float(mu)
    )

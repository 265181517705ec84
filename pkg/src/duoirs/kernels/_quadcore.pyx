# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled phase-optimizer hot kernels.

The Riemannian CG inner loop evaluates the smoothed penalized objective and
its gradient thousands of times per solve on small (L, M, M) stacks; these
fused loops avoid per-call numpy dispatch overhead. Contracts mirror
`_pyquad`.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

from libc.math cimport exp

cdef double EXP_CLIP = 600.0


cdef inline double _values_into(
    const double complex[:, :, ::1] u,
    const double complex[:, ::1] q,
    const double complex[::1] theta,
    double complex[:, ::1] mat,
    double[::1] x,
) noexcept nogil:
    """Fill mat[l] = U_l @ theta and x[l]; returns 0 (dummy)."""
    cdef Py_ssize_t L = u.shape[0], M = u.shape[1]
    cdef Py_ssize_t l, i, j
    cdef double complex acc, quad, lin
    for l in range(L):
        quad = 0
        lin = 0
        for i in range(M):
            acc = 0
            for j in range(M):
                acc = acc + u[l, i, j] * theta[j]
            mat[l, i] = acc
            quad = quad + theta[i].conjugate() * acc
            lin = lin + theta[i].conjugate() * q[l, i]
        x[l] = quad.real + 2.0 * lin.real
    return 0.0


def quad_values(const double complex[:, :, ::1] u,
                const double complex[:, ::1] q,
                const double complex[::1] theta):
    cdef Py_ssize_t L = u.shape[0], M = u.shape[1]
    mat_arr = np.empty((L, M), dtype=np.complex128)
    x_arr = np.empty(L, dtype=np.float64)
    cdef double complex[:, ::1] mat = mat_arr
    cdef double[::1] x = x_arr
    with nogil:
        _values_into(u, q, theta, mat, x)
    return x_arr


cdef inline double _penalized_from_x(
    const double[::1] x,
    const double[::1] weights,
    const double[::1] gts,
    double rho,
    double mu,
) noexcept nogil:
    cdef Py_ssize_t L = x.shape[0]
    cdef Py_ssize_t l
    cdef double val = 0.0, arg
    for l in range(L):
        val += weights[l] * x[l]
    if rho != 0.0:
        for l in range(L):
            arg = mu * (x[l] - gts[l])
            if arg > EXP_CLIP:
                arg = EXP_CLIP
            val += rho * (exp(arg) - 1.0)
    return val


def penalized_value(const double complex[:, :, ::1] u,
                    const double complex[:, ::1] q,
                    const double[::1] weights,
                    const double[::1] gts,
                    const double complex[::1] theta,
                    double rho,
                    double mu):
    cdef Py_ssize_t L = u.shape[0], M = u.shape[1]
    mat_arr = np.empty((L, M), dtype=np.complex128)
    x_arr = np.empty(L, dtype=np.float64)
    cdef double complex[:, ::1] mat = mat_arr
    cdef double[::1] x = x_arr
    cdef double val
    with nogil:
        _values_into(u, q, theta, mat, x)
        val = _penalized_from_x(x, weights, gts, rho, mu)
    return val


def penalized_value_grad(const double complex[:, :, ::1] u,
                         const double complex[:, ::1] q,
                         const double[::1] weights,
                         const double[::1] gts,
                         const double complex[::1] theta,
                         double rho,
                         double mu):
    cdef Py_ssize_t L = u.shape[0], M = u.shape[1]
    mat_arr = np.empty((L, M), dtype=np.complex128)
    x_arr = np.empty(L, dtype=np.float64)
    grad_arr = np.zeros(M, dtype=np.complex128)
    cdef double complex[:, ::1] mat = mat_arr
    cdef double[::1] x = x_arr
    cdef double complex[::1] grad = grad_arr
    cdef Py_ssize_t l, i
    cdef double val, coeff, arg
    with nogil:
        _values_into(u, q, theta, mat, x)
        val = _penalized_from_x(x, weights, gts, rho, mu)
        for l in range(L):
            coeff = weights[l]
            if rho != 0.0:
                arg = mu * (x[l] - gts[l])
                if arg > EXP_CLIP:
                    arg = EXP_CLIP
                coeff += rho * mu * exp(arg)
            for i in range(M):
                grad[i] = grad[i] + 2.0 * coeff * (mat[l, i] + q[l, i])
    return val, grad_arr


def retract_value(const double complex[:, :, ::1] u,
                  const double complex[:, ::1] q,
                  const double[::1] weights,
                  const double[::1] gts,
                  const double complex[::1] theta,
                  const double complex[::1] d,
                  double t,
                  double rho,
                  double mu):
    cdef Py_ssize_t L = u.shape[0], M = u.shape[1]
    new_arr = np.empty(M, dtype=np.complex128)
    mat_arr = np.empty((L, M), dtype=np.complex128)
    x_arr = np.empty(L, dtype=np.float64)
    cdef double complex[::1] new = new_arr
    cdef double complex[:, ::1] mat = mat_arr
    cdef double[::1] x = x_arr
    cdef Py_ssize_t i
    cdef double complex c
    cdef double mag, val
    cdef bint ok = True
    with nogil:
        for i in range(M):
            c = theta[i] + t * d[i]
            mag = abs(c)
            if mag < 1e-14:
                ok = False
                break
            new[i] = c / mag
        if ok:
            _values_into(u, q, new, mat, x)
            val = _penalized_from_x(x, weights, gts, rho, mu)
    if not ok:
        return np.inf, np.asarray(theta), False
    return val, new_arr, True

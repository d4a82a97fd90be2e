# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled finite-volume kernels; same API as ``_kernels_py``.

Per-cell arithmetic follows the numpy fallback operation by operation, so
``advect``, ``advect_adjoint`` and ``laplacian`` agree bitwise. ``sym_dot``
sums mirrored row pairs sequentially rather than pairwise, so reductions (and
hence CG iterates) agree to rounding only.
"""
import numpy as np
from libc.math cimport sqrt


cdef inline double _flux(double f, double a, double b) nogil:
    return f * a if f >= 0.0 else f * b


def advect(const double[::1] y, const double[::1] wx, const double[::1] wy, Py_ssize_t nx):
    cdef Py_ssize_t i, j, k
    cdef double right, left, up, down, f
    out = np.empty(nx * nx)
    cdef double[::1] o = out
    with nogil:
        for j in range(nx):
            for i in range(nx):
                k = j * nx + i
                right = 0.0
                left = 0.0
                up = 0.0
                down = 0.0
                if i < nx - 1:
                    f = 0.5 * (wx[k] + wx[k + 1])
                    right = _flux(f, y[k], y[k + 1])
                if i > 0:
                    f = 0.5 * (wx[k - 1] + wx[k])
                    left = _flux(f, y[k - 1], y[k])
                if j < nx - 1:
                    f = 0.5 * (wy[k] + wy[k + nx])
                    up = _flux(f, y[k], y[k + nx])
                if j > 0:
                    f = 0.5 * (wy[k - nx] + wy[k])
                    down = _flux(f, y[k - nx], y[k])
                o[k] = (right - left) + (up - down)
    return out


def advect_adjoint(const double[::1] g, const double[::1] y, const double[::1] wx,
                   const double[::1] wy, Py_ssize_t nx):
    # per cell, accumulate in the fallback's order: right, left, up, down face
    cdef Py_ssize_t i, j, k, n = nx * nx
    cdef double f, d, sgy, sgx, sgw
    gy_a = np.empty(n)
    gwx_a = np.empty(n)
    gwy_a = np.empty(n)
    cdef double[::1] gy = gy_a
    cdef double[::1] gwx = gwx_a
    cdef double[::1] gwy = gwy_a
    with nogil:
        for j in range(nx):
            for i in range(nx):
                k = j * nx + i
                sgy = 0.0
                sgx = 0.0
                sgw = 0.0
                if i < nx - 1:
                    f = 0.5 * (wx[k] + wx[k + 1])
                    d = g[k] - g[k + 1]
                    if f >= 0.0:
                        sgy += f * d
                    sgx += 0.5 * ((y[k] if f >= 0.0 else y[k + 1]) * d)
                if i > 0:
                    f = 0.5 * (wx[k - 1] + wx[k])
                    d = g[k - 1] - g[k]
                    if f < 0.0:
                        sgy += f * d
                    sgx += 0.5 * ((y[k - 1] if f >= 0.0 else y[k]) * d)
                if j < nx - 1:
                    f = 0.5 * (wy[k] + wy[k + nx])
                    d = g[k] - g[k + nx]
                    if f >= 0.0:
                        sgy += f * d
                    sgw += 0.5 * ((y[k] if f >= 0.0 else y[k + nx]) * d)
                if j > 0:
                    f = 0.5 * (wy[k - nx] + wy[k])
                    d = g[k - nx] - g[k]
                    if f < 0.0:
                        sgy += f * d
                    sgw += 0.5 * ((y[k - nx] if f >= 0.0 else y[k]) * d)
                gy[k] = sgy
                gwx[k] = sgx
                gwy[k] = sgw
    return gy_a, gwx_a, gwy_a


cdef void _lap(const double[::1] y, double[::1] o, Py_ssize_t nx) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double l, r, d, u
    for j in range(nx):
        for i in range(nx):
            k = j * nx + i
            l = y[k - 1] if i > 0 else y[k]
            r = y[k + 1] if i < nx - 1 else y[k]
            d = y[k - nx] if j > 0 else y[k]
            u = y[k + nx] if j < nx - 1 else y[k]
            o[k] = 4.0 * y[k] - ((l + r) + (d + u))


def laplacian(const double[::1] y, Py_ssize_t nx):
    out = np.empty(nx * nx)
    cdef double[::1] o = out
    with nogil:
        _lap(y, o, nx)
    return out


cdef double _sym_dot(const double[::1] a, const double[::1] b, Py_ssize_t nx) noexcept nogil:
    cdef Py_ssize_t i, j, k1, k2
    cdef double s = 0.0
    for j in range(nx // 2):
        for i in range(nx):
            k1 = j * nx + i
            k2 = (nx - 1 - j) * nx + i
            s += a[k1] * b[k1] + a[k2] * b[k2]
    return s


def sym_dot(const double[::1] a, const double[::1] b, Py_ssize_t nx):
    return _sym_dot(a, b, nx)


def cg_solve(const double[::1] b, Py_ssize_t nx, double c, double tol, Py_ssize_t maxiter):
    cdef Py_ssize_t n = nx * nx, k, it = 0
    cdef double bnorm, rr, rr_new, alpha, beta
    x_a = np.array(b, dtype=np.float64, copy=True)
    cdef double[::1] x = x_a
    bnorm = sqrt(_sym_dot(b, b, nx))
    if bnorm == 0.0:
        return x_a, 0, 0.0
    cdef double[::1] r = np.empty(n)
    cdef double[::1] p = np.empty(n)
    cdef double[::1] Ap = np.empty(n)
    with nogil:
        _lap(x, Ap, nx)
        for k in range(n):
            r[k] = b[k] - (x[k] + c * Ap[k])
            p[k] = r[k]
        rr = _sym_dot(r, r, nx)
        while sqrt(rr) > tol * bnorm and it < maxiter:
            _lap(p, Ap, nx)
            for k in range(n):
                Ap[k] = p[k] + c * Ap[k]
            alpha = rr / _sym_dot(p, Ap, nx)
            for k in range(n):
                x[k] += alpha * p[k]
                r[k] -= alpha * Ap[k]
            rr_new = _sym_dot(r, r, nx)
            beta = rr_new / rr
            for k in range(n):
                p[k] = r[k] + beta * p[k]
            rr = rr_new
            it += 1
    return x_a, it, sqrt(rr) / bnorm

"""Pure-numpy finite-volume kernels.

Same signatures and semantics as the compiled ``_kernels`` extension. Fields
are flat row-major arrays of length ``nx * nx`` with ``k = j * nx + i``, where
``i`` indexes x1 and ``j`` indexes x2.

Reductions are ordered so that mirroring the inputs about x2 = 0 mirrors the
outputs bitwise.
"""
from __future__ import annotations

import numpy as np


def advect(y, wx, wy, nx):
    """Net first-order upwind outflow per cell, ``sum_faces w_f * y_upwind``.

    Face velocities are arithmetic means of the two adjacent cell velocities.
    Boundary faces carry no flux.
    """
    Y = y.reshape(nx, nx)
    WX = wx.reshape(nx, nx)
    WY = wy.reshape(nx, nx)
    fx = 0.5 * (WX[:, :-1] + WX[:, 1:])
    Fx = np.where(fx >= 0.0, fx * Y[:, :-1], fx * Y[:, 1:])
    fy = 0.5 * (WY[:-1, :] + WY[1:, :])
    Fy = np.where(fy >= 0.0, fy * Y[:-1, :], fy * Y[1:, :])
    right = np.zeros((nx, nx))
    left = np.zeros((nx, nx))
    up = np.zeros((nx, nx))
    down = np.zeros((nx, nx))
    right[:, :-1] = Fx
    left[:, 1:] = Fx
    up[:-1, :] = Fy
    down[1:, :] = Fy
    return ((right - left) + (up - down)).ravel()


def advect_adjoint(g, y, wx, wy, nx):
    """Transpose of :func:`advect` applied to cotangent ``g``.

    Returns ``(gy, gwx, gwy)``: the vector-Jacobian products with respect to
    the density and the two velocity components.
    """
    G = g.reshape(nx, nx)
    Y = y.reshape(nx, nx)
    WX = wx.reshape(nx, nx)
    WY = wy.reshape(nx, nx)

    gy = np.zeros((nx, nx))
    gwx = np.zeros((nx, nx))
    gwy = np.zeros((nx, nx))

    fx = 0.5 * (WX[:, :-1] + WX[:, 1:])
    dx = G[:, :-1] - G[:, 1:]
    pos = fx >= 0.0
    gy[:, :-1] += np.where(pos, fx * dx, 0.0)
    gy[:, 1:] += np.where(pos, 0.0, fx * dx)
    gfx = np.where(pos, Y[:, :-1], Y[:, 1:]) * dx
    gwx[:, :-1] += 0.5 * gfx
    gwx[:, 1:] += 0.5 * gfx

    fy = 0.5 * (WY[:-1, :] + WY[1:, :])
    dy = G[:-1, :] - G[1:, :]
    pos = fy >= 0.0
    gy[:-1, :] += np.where(pos, fy * dy, 0.0)
    gy[1:, :] += np.where(pos, 0.0, fy * dy)
    gfy = np.where(pos, Y[:-1, :], Y[1:, :]) * dy
    gwy[:-1, :] += 0.5 * gfy
    gwy[1:, :] += 0.5 * gfy
    return gy.ravel(), gwx.ravel(), gwy.ravel()


def laplacian(y, nx):
    """Five-point graph Laplacian with reflecting (zero-flux) ghost cells."""
    Y = y.reshape(nx, nx)
    P = np.pad(Y, 1, mode="edge")
    return (4.0 * Y - ((P[1:-1, :-2] + P[1:-1, 2:]) + (P[:-2, 1:-1] + P[2:, 1:-1]))).ravel()


def sym_dot(a, b, nx):
    """Dot product summed in an order invariant under row mirroring."""
    p = (a * b).reshape(nx, nx)
    half = nx // 2
    return float(np.sum(p[:half] + p[::-1][:half]))


def cg_solve(b, nx, c, tol, maxiter):
    """Solve ``(I + c L) x = b`` by conjugate gradients from ``x0 = b``.

    Returns ``(x, iterations, relative_residual)``.
    """
    bnorm = np.sqrt(sym_dot(b, b, nx))
    x = b.copy()
    if bnorm == 0.0:
        return x, 0, 0.0
    r = b - (x + c * laplacian(x, nx))
    p = r.copy()
    rr = sym_dot(r, r, nx)
    it = 0
    while np.sqrt(rr) > tol * bnorm and it < maxiter:
        Ap = p + c * laplacian(p, nx)
        alpha = rr / sym_dot(p, Ap, nx)
        x += alpha * p
        r -= alpha * Ap
        rr_new = sym_dot(r, r, nx)
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    return x, it, float(np.sqrt(rr) / bnorm)

from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from romfbk import _kernels_py, kernels
from romfbk import grid as G
from romfbk.grid import FomConfig, build_grid, gaussian_density

compiled = pytest.mark.skipif("cython" not in kernels.available_backends(),
                              reason="compiled kernels not built")


@pytest.fixture
def restore_backend():
    name = kernels.BACKEND
    yield
    kernels.use_backend(name)


def _fields(nx, seed):
    rng = np.random.default_rng(seed)
    n = nx * nx
    return rng.random(n), rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n)


@compiled
@pytest.mark.parametrize("nx", [4, 16, 33])
def test_compiled_matches_python_bitwise(nx):
    from romfbk import _kernels as ck
    y, g, wx, wy = _fields(nx, nx)
    assert np.array_equal(ck.advect(y, wx, wy, nx), _kernels_py.advect(y, wx, wy, nx))
    for a, b in zip(ck.advect_adjoint(g, y, wx, wy, nx), _kernels_py.advect_adjoint(g, y, wx, wy, nx)):
        assert np.array_equal(a, b)
    assert np.array_equal(ck.laplacian(y, nx), _kernels_py.laplacian(y, nx))


@compiled
@pytest.mark.parametrize("nx", [8, 32])
def test_compiled_reductions_agree(nx):
    from romfbk import _kernels as ck
    y, g, _, _ = _fields(nx, 1)
    assert ck.sym_dot(y, g, nx) == pytest.approx(_kernels_py.sym_dot(y, g, nx), rel=1e-13)
    xa, ia, ra = ck.cg_solve(y, nx, 2.0, 1e-12, 1000)
    xb, ib, rb = _kernels_py.cg_solve(y, nx, 2.0, 1e-12, 1000)
    assert np.allclose(xa, xb, rtol=0, atol=1e-10) and abs(ia - ib) <= 1
    assert ra <= 1e-12 and rb <= 1e-12


def test_cg_solves_the_system():
    nx = 16
    b = _fields(nx, 2)[0]
    x, it, res = kernels.cg_solve(b, nx, 0.7, 1e-12, 1000)
    assert it > 0 and res <= 1e-12
    assert np.max(np.abs(x + 0.7 * kernels.laplacian(x, nx) - b)) < 1e-10


def test_advect_adjoint_is_transpose():
    nx = 8
    y, g, wx, wy = _fields(nx, 3)
    gy, gwx, gwy = kernels.advect_adjoint(g, y, wx, wy, nx)
    eps, d = 1e-7, np.random.default_rng(4).standard_normal(nx * nx)
    # linear in y for fixed velocities
    assert g @ kernels.advect(d, wx, wy, nx) == pytest.approx(gy @ d, rel=1e-12)
    fd = (g @ kernels.advect(y, wx + eps * d, wy, nx) - g @ kernels.advect(y, wx - eps * d, wy, nx)) / (2 * eps)
    assert fd == pytest.approx(gwx @ d, rel=1e-6)


def test_advect_conserves_and_laplacian_annihilates_constants():
    nx = 12
    y, _, wx, wy = _fields(nx, 5)
    assert abs(np.sum(kernels.advect(y, wx, wy, nx))) < 1e-13
    assert not kernels.laplacian(np.full(nx * nx, 3.0), nx).any()


def test_use_backend(restore_backend):
    assert "python" in kernels.available_backends()
    kernels.use_backend("python")
    assert kernels.BACKEND == "python" and kernels.advect is _kernels_py.advect
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")
    if "cython" not in kernels.available_backends():
        with pytest.raises(RuntimeError):
            kernels.use_backend("cython")


def test_environment_forces_python():
    env = dict(os.environ, ROMFBK_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from romfbk import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@compiled
def test_default_backend_is_compiled_when_built():
    env = {k: v for k, v in os.environ.items() if k != "ROMFBK_PURE_PYTHON"}
    out = subprocess.run([sys.executable, "-c", "from romfbk import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "cython"


@compiled
def test_step_and_vjp_identical_across_backends(restore_backend):
    g = build_grid(16)
    cfg = FomConfig()
    rng = np.random.default_rng(6)
    y = gaussian_density(g, (-0.2, 0.1))
    u = 0.3 * rng.standard_normal((2, g.n_cells))
    lam = rng.standard_normal(g.n_cells)
    out = {}
    for name in ("python", "cython"):
        kernels.use_backend(name)
        y1 = G.step(y, u, None, g, cfg)
        out[name] = (y1, *G.step_vjp(y, u, lam, g, cfg))
    for a, b in zip(out["python"], out["cython"]):
        assert np.allclose(a, b, rtol=1e-11, atol=1e-14)

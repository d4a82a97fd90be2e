from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erf

from romfbk import grid as G
from romfbk.grid import (FomConfig, Scenario, background_flow, build_grid, gaussian_density,
                         mirror_control, mirror_state, simulate, total_mass)

FAST = settings(max_examples=25, deadline=None)


# ---------------------------------------------------------------------------- build_grid

def test_build_grid_sizes():
    g = build_grid(32)
    assert g.h == 0.0625
    assert g.n_cells == 1024
    assert g.h * g.nx == 2.0


def test_build_grid_first_center():
    g = build_grid(8)
    assert tuple(g.centers[0]) == (-0.875, -0.875)


@pytest.mark.parametrize("nx", [7, 6, 9, 0])
def test_build_grid_rejects(nx):
    with pytest.raises(ValueError):
        build_grid(nx)


@given(st.integers(4, 40).map(lambda n: 2 * n))
@FAST
def test_center_formula(nx):
    g = build_grid(nx)
    k = np.arange(g.n_cells)
    i, j = k % nx, k // nx
    assert np.allclose(g.x1, -1 + (i + 0.5) * g.h, rtol=0, atol=1e-15)
    assert np.allclose(g.x2, -1 + (j + 0.5) * g.h, rtol=0, atol=1e-15)


# ---------------------------------------------------------------------------- densities

def test_gaussian_peak_at_nearest_cell():
    g = build_grid(64)
    c = (-0.45, 0.21)
    y = gaussian_density(g, c, 0.05)
    nearest = np.argmin((g.x1 - c[0]) ** 2 + (g.x2 - c[1]) ** 2)
    assert np.argmax(y) == nearest
    assert y.max() <= 10 / math.pi
    assert y.max() == pytest.approx(10 / math.pi, rel=5e-3)


def test_gaussian_symmetries():
    g = build_grid(32)
    Y = gaussian_density(g, (0.0, 0.0)).reshape(32, 32)
    assert np.array_equal(Y, Y.T)
    assert np.array_equal(Y, Y[::-1])
    assert np.array_equal(Y, Y[:, ::-1])


def _truncated_gaussian_mass(c, var=0.05):
    # closed form of the Gaussian mass inside (-1, 1)^2
    s = math.sqrt(2 * var)
    one = [0.5 * (erf((1 - ci) / s) + erf((1 + ci) / s)) for ci in c]
    return one[0] * one[1]


def test_gaussian_mass_matches_quadrature_oracle():
    g = build_grid(64)
    m = total_mass(gaussian_density(g, (0.0, 0.0)), g)
    oracle = _truncated_gaussian_mass((0.0, 0.0))
    assert abs(m - oracle) < 1e-3
    assert abs(m - 1.0) < 1e-3


def test_gaussian_rejects_outside_center():
    with pytest.raises(ValueError):
        gaussian_density(build_grid(8), (1.0, 0.0))


def test_total_mass_examples():
    g = build_grid(32)
    assert total_mass(np.ones(g.n_cells), g) == 4.0
    assert total_mass(np.zeros(g.n_cells), g) == 0.0


# ---------------------------------------------------------------------------- flows

def test_background_flow_zero_intensity():
    assert not background_flow(build_grid(16), 0.0, 0.7).any()


def test_background_flow_vertical():
    v = background_flow(build_grid(16), 0.4, 0.0)
    assert not v[0].any()
    assert np.all(v[1] == 0.4)


def test_background_flow_inflow_parameters():
    g = build_grid(16)
    gamma, alpha = 0.40, -0.92
    v = background_flow(g, gamma, alpha)
    expected = (g.x1 + 1) * (1 - g.x1) * gamma * math.sin(alpha)
    assert np.allclose(v[0], expected, rtol=0, atol=1e-15)
    assert np.all(v[1] == gamma * math.cos(alpha))
    # the profile decays towards the side walls x1 = +-1
    col = v[0].reshape(16, 16)
    assert np.all(np.abs(col[:, [0, -1]]) < 0.15 * np.abs(col[:, [7, 8]]))


def test_background_flow_rejects_negative_intensity():
    with pytest.raises(ValueError):
        background_flow(build_grid(8), -0.1, 0.0)


# ---------------------------------------------------------------------------- step

def test_step_no_transport_no_diffusion_is_identity():
    g = build_grid(16)
    y = gaussian_density(g, (0.1, -0.2))
    out = G.step(y, np.zeros((2, g.n_cells)), None, g, FomConfig(nu=0.0))
    assert np.array_equal(out, y)


def test_step_constant_density_is_steady():
    g = build_grid(16)
    y = np.full(g.n_cells, 0.7)
    out = G.step(y, np.zeros((2, g.n_cells)), None, g, FomConfig(nu=0.001))
    assert np.allclose(out, y, rtol=0, atol=1e-15)


def _random_velocity(rng, g, amp):
    return amp * rng.standard_normal((2, g.n_cells))


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0), st.sampled_from([8, 16, 32]))
@FAST
def test_step_conserves_mass(seed, amp, nx):
    rng = np.random.default_rng(seed)
    g = build_grid(nx)
    y = rng.random(g.n_cells)
    u = _random_velocity(rng, g, amp)
    m0 = total_mass(y, g)
    out = G.step(y, u, None, g, FomConfig())
    assert abs(total_mass(out, g) - m0) <= 1e-10 * abs(m0)


@given(st.integers(0, 2**32 - 1), st.sampled_from([8, 16, 32]))
@FAST
def test_step_positivity_under_cfl(seed, nx):
    rng = np.random.default_rng(seed)
    g = build_grid(nx)
    cfg = FomConfig(substeps=1)
    y = rng.random(g.n_cells) * (rng.random(g.n_cells) > 0.3)
    w = rng.uniform(-1, 1, (2, g.n_cells))
    # scale so the full step satisfies max|w| dt / h <= 1 in each direction combined
    w *= 0.999 * g.h / (cfg.dt * (np.abs(w[0]).max() + np.abs(w[1]).max()))
    assert G.cfl_number(w, g, cfg.dt) <= 1.0
    out = G.step(y, w, None, g, cfg)
    assert out.min() >= -1e-12


@given(st.integers(0, 2**32 - 1), st.sampled_from([8, 16]), st.booleans())
@FAST
def test_step_mirror_equivariance_bitwise(seed, nx, with_flow):
    rng = np.random.default_rng(seed)
    g = build_grid(nx)
    y = rng.random(g.n_cells)
    u = _random_velocity(rng, g, 0.5)
    v = background_flow(g, 0.3, 0.0) if with_flow else None
    vm = None if v is None else mirror_control(v, g)
    cfg = FomConfig()
    lhs = G.step(mirror_state(y, g), mirror_control(u, g), vm, g, cfg)
    rhs = mirror_state(G.step(y, u, v, g, cfg), g)
    assert np.array_equal(lhs, rhs)


def test_grid_refinement_first_order():
    def run(nx):
        g = build_grid(nx)
        cfg = FomConfig(dt=0.125, T=0.5, substeps=64)
        y = gaussian_density(g, (-0.2, 0.1))
        u = np.vstack([0.5 * np.exp(-(g.x1**2 + g.x2**2)), 0.3 * np.cos(g.x1)])
        for _ in range(cfg.Nt):
            y = G.step(y, u, None, g, cfg)
        return y

    def restrict(y, nx, f):
        return y.reshape(nx // f, f, nx // f, f).mean(axis=(1, 3)).ravel()

    ref = run(128)
    err = {nx: np.sum(np.abs(run(nx) - restrict(ref, 128, 128 // nx))) * (2 / nx) ** 2
           for nx in (16, 32)}
    ratio = err[16] / err[32]
    assert 1.3 <= ratio <= 3.0, ratio


def test_step_raises_on_runaway_velocity():
    g = build_grid(8)
    u = np.full((2, g.n_cells), 1e9)
    with pytest.raises(G.SolverError):
        G.step(np.ones(g.n_cells), u, None, g, FomConfig())


def test_substeps_adapt_to_cfl():
    g = build_grid(16)
    cfg = FomConfig(substeps=4)
    slow = np.full((2, g.n_cells), 0.01)
    fast = np.full((2, g.n_cells), 10.0)
    assert G.n_substeps(slow, g, cfg) == 4
    n = G.n_substeps(fast, g, cfg)
    assert G.cfl_number(fast, g, cfg.dt / n) <= 1.0


# ---------------------------------------------------------------------------- simulate

def _dense_laplacian(nx):
    # independent assembly of the Neumann 5-point Laplacian (positive semi-definite)
    N = nx * nx
    L = np.zeros((N, N))
    for j in range(nx):
        for i in range(nx):
            k = j * nx + i
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ii, jj = i + di, j + dj
                if 0 <= ii < nx and 0 <= jj < nx:
                    L[k, k] += 1
                    L[k, jj * nx + ii] -= 1
    return L


def test_simulate_zero_control_matches_dense_reference():
    g = build_grid(16)
    cfg = FomConfig(nu=0.01)
    y0 = gaussian_density(g, (-0.3, 0.2))
    traj = simulate(y0, np.zeros((cfg.Nt, 2, g.n_cells)), Scenario((0.2, 0.0)), g, cfg)
    A = np.eye(g.n_cells) + cfg.dt * cfg.nu / g.h**2 * _dense_laplacian(16)
    ref = [y0]
    for _ in range(cfg.Nt):
        ref.append(np.linalg.solve(A, ref[-1]))
    peaks = traj.states.max(axis=1)
    assert np.allclose(peaks, [r.max() for r in ref], rtol=1e-9, atol=0)
    assert np.all(np.diff(peaks) < 0)


def test_simulate_zero_horizon():
    g = build_grid(8)
    cfg = FomConfig(T=0.0)
    y0 = gaussian_density(g, (0.0, 0.0))
    traj = simulate(y0, np.zeros((0, 2, g.n_cells)), Scenario((0.1, 0.1)), g, cfg)
    assert traj.states.shape == (1, g.n_cells)
    assert np.array_equal(traj.states[0], y0)


def test_simulate_upward_flow_lifts_center_of_mass():
    g = build_grid(16)
    cfg = FomConfig()
    y0 = gaussian_density(g, (0.0, -0.3))
    traj = simulate(y0, np.zeros((cfg.Nt, 2, g.n_cells)), Scenario((0.2, 0.0, 0.4, 0.0)), g, cfg)
    com = [float(np.sum(s * g.x2) / np.sum(s)) for s in traj.states]
    assert np.all(np.diff(com) > 0)


def test_simulate_rejects_wrong_control_count():
    g = build_grid(8)
    with pytest.raises(ValueError):
        simulate(np.ones(g.n_cells), np.zeros((3, 2, g.n_cells)), Scenario((0, 0)), g, FomConfig())


# ---------------------------------------------------------------------------- configs

def test_fom_config_validation():
    assert FomConfig().Nt == 4
    with pytest.raises(ValueError):
        FomConfig(nu=-1.0)
    with pytest.raises(ValueError):
        FomConfig(dt=0.0)
    with pytest.raises(ValueError):
        FomConfig(T=1.0, dt=0.3)


def test_scenario_validation():
    assert Scenario((0.1, -0.2)).mirrored().mu == (0.1, 0.2)
    assert Scenario((0.1, 0.2)).inside(((0, 0.5), (-0.5, 0.5)))
    with pytest.raises(ValueError):
        Scenario((0.1,))
    with pytest.raises(ValueError):
        Scenario((0.1, 0.2, 0.3, 0.4)).mirrored()

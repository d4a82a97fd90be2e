"""Open-loop optimal control by discrete adjoints, and snapshot generation.

The reduced cost ``J(u) = J(y(u), u)`` is differentiated exactly through the
semi-implicit time stepping of :mod:`romfbk.grid` (discretise-then-optimise),
then minimised with L-BFGS.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .grid import (DEFAULT_VARIANCE, INITIAL_BOX, TARGET_BOX, FomConfig, Grid, Scenario,
                   SolverError, Trajectory, gaussian_density, mirror_control, mirror_state,
                   scenario_flow, simulate, step_vjp)
from .optim import lbfgs

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OcpConfig:
    beta: float = 0.2
    beta_g: float = 0.2
    boundary_weight: float = 1.0
    opt_tol: float = 1e-6
    max_iters: int = 500
    lbfgs_memory: int = 10

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.beta_g < 0 or self.boundary_weight < 0:
            raise ValueError("beta_g and boundary_weight must be non-negative")
        if self.opt_tol <= 0 or self.max_iters < 1 or self.lbfgs_memory < 1:
            raise ValueError("opt_tol, max_iters and lbfgs_memory must be positive")


@lru_cache(maxsize=8)
def _gradient_gram(nx: int) -> sp.csr_matrix:
    """``Gx^T Gx + Gy^T Gy`` for the centred / one-sided difference gradient."""
    h = 2.0 / nx
    D = sp.lil_matrix((nx, nx))
    D[0, 0], D[0, 1] = -1.0 / h, 1.0 / h
    D[-1, -2], D[-1, -1] = -1.0 / h, 1.0 / h
    for i in range(1, nx - 1):
        D[i, i - 1], D[i, i + 1] = -0.5 / h, 0.5 / h
    D = D.tocsr()
    eye = sp.identity(nx, format="csr")
    Gx = sp.kron(eye, D, format="csr")
    Gy = sp.kron(D, eye, format="csr")
    return (Gx.T @ Gx + Gy.T @ Gy).tocsr()


def _state_weights(Nt: int, dt: float) -> np.ndarray:
    """Trapezoid weights over t_0..t_Nt for integrals of the state."""
    w = np.full(Nt + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def cost_terms(states, controls, target, grid: Grid, dt: float, cfg: OcpConfig) -> dict:
    """The four contributions to the discrete cost, keyed by name."""
    states = np.asarray(states)
    controls = np.asarray(controls)
    if target.shape != (grid.n_cells,) or states.shape[1:] != (grid.n_cells,):
        raise ValueError("state/target shape does not match the grid")
    if controls.shape[1:] != (2, grid.n_cells) or states.shape[0] != controls.shape[0] + 1:
        raise ValueError("control shape does not match the states")
    h2 = grid.h**2
    ws = _state_weights(controls.shape[0], dt)
    bf = grid.boundary_faces()
    G = _gradient_gram(grid.nx)
    diff = states - target
    tracking = 0.5 * h2 * float(ws @ np.sum(diff * diff, axis=1))
    boundary = cfg.boundary_weight * grid.h * float(ws @ (states**2 @ bf))
    energy = 0.5 * cfg.beta * dt * h2 * float(np.sum(controls * controls))
    flat = controls.reshape(-1, grid.n_cells)
    smooth = 0.5 * cfg.beta_g * dt * h2 * float(np.sum(flat * (G @ flat.T).T))
    return {"tracking": tracking, "boundary": boundary, "energy": energy, "gradient": smooth}


def cost(traj: Trajectory, cfg: OcpConfig, target, grid: Grid, dt: float) -> float:
    """Discrete cost: tracking + boundary penalty + control energy + control roughness.

    State integrals use trapezoid weights over ``t_0..t_Nt``; control integrals
    use left endpoints ``t_0..t_{Nt-1}``. Volume integrals are cell sums times
    ``h^2``; the boundary integral sums boundary-face values times ``h``.
    """
    return sum(cost_terms(traj.states, traj.controls, target, grid, dt, cfg).values())


def cost_and_gradient(controls, y0, scenario: Scenario, grid: Grid, cfg_fom: FomConfig,
                      cfg_ocp: OcpConfig, target):
    """Reduced cost and its exact discrete-adjoint gradient with respect to the controls."""
    controls = np.asarray(controls, dtype=float).reshape(cfg_fom.Nt, 2, grid.n_cells)
    Nt, dt, h, h2 = cfg_fom.Nt, cfg_fom.dt, grid.h, grid.h**2
    v = scenario_flow(grid, scenario)
    traj = simulate(y0, controls, scenario, grid, cfg_fom)
    Y = traj.states
    J = cost(traj, cfg_ocp, target, grid, dt)

    ws = _state_weights(Nt, dt)
    bf = grid.boundary_faces()
    G = _gradient_gram(grid.nx)
    grad = cfg_ocp.beta * dt * h2 * controls
    flat = controls.reshape(-1, grid.n_cells)
    grad += (cfg_ocp.beta_g * dt * h2 * (G @ flat.T).T).reshape(grad.shape)

    def dJ_dy(j):
        return ws[j] * (h2 * (Y[j] - target) + 2.0 * cfg_ocp.boundary_weight * h * bf * Y[j])

    ybar = dJ_dy(Nt)
    for j in range(Nt - 1, -1, -1):
        lam, wbar = step_vjp(Y[j], controls[j] + v, ybar, grid, cfg_fom)
        grad[j] += wbar
        ybar = dJ_dy(j) + lam
    return J, grad


def gradient(controls, y0, scenario, grid, cfg_fom, cfg_ocp, target) -> np.ndarray:
    return cost_and_gradient(controls, y0, scenario, grid, cfg_fom, cfg_ocp, target)[1]


def solve_ocp(y0, scenario: Scenario, grid: Grid, cfg_fom: FomConfig, cfg_ocp: OcpConfig,
              target=None, initial_center=(float("nan"), float("nan")), u0=None) -> Trajectory:
    """Optimal open-loop controls from a zero (or given) initial guess.

    ``traj.info`` records iterations, final gradient norm, the cost history and
    a warning string when the line search gave up.
    """
    if target is None:
        target = gaussian_density(grid, scenario.target_center, DEFAULT_VARIANCE)
    shape = (cfg_fom.Nt, 2, grid.n_cells)
    x0 = np.zeros(shape) if u0 is None else np.asarray(u0, dtype=float).reshape(shape)

    def fg(x):
        try:
            J, g = cost_and_gradient(x, y0, scenario, grid, cfg_fom, cfg_ocp, target)
        except SolverError:
            # trial controls too violent for the plant: reject the step
            return float("inf"), np.zeros_like(x)
        return J, g.ravel()

    res = lbfgs(fg, x0.ravel(), max_iter=cfg_ocp.max_iters, gtol=cfg_ocp.opt_tol,
                memory=cfg_ocp.lbfgs_memory)
    traj = simulate(y0, res.x.reshape(shape), scenario, grid, cfg_fom, initial_center)
    traj.cost = res.fun
    traj.info = {"iterations": res.n_iter, "evaluations": res.n_fev, "grad_norm": res.grad_norm,
                 "converged": res.converged, "warning": res.warning, "history": res.history}
    return traj


@dataclass
class SnapshotSet:
    """Optimal (state, scenario, control) triplets grouped by trajectory.

    Arrays are indexed ``[trajectory, time]``; ``states`` holds ``Nt + 1``
    states per trajectory so one-step transitions are available, while the
    triplets use ``t_0..t_{Nt-1}``. ``test`` lists the trajectory indices held
    out from training. ``source`` is the index of the trajectory each entry was
    mirrored from (itself for originals).
    """

    nx: int
    dt: float
    states: np.ndarray          # (n_traj, Nt + 1, N)
    controls: np.ndarray        # (n_traj, Nt, 2, N)
    mu: np.ndarray              # (n_traj, p)
    initial_centers: np.ndarray  # (n_traj, 2)
    costs: np.ndarray           # (n_traj,)
    test: np.ndarray            # sorted trajectory indices
    source: np.ndarray          # (n_traj,)
    meta: dict = field(default_factory=dict)

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    @property
    def Nt(self) -> int:
        return self.controls.shape[1]

    @property
    def train(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_traj), self.test)

    def __len__(self) -> int:
        return self.n_traj * self.Nt

    def triplets(self, which: str = "all"):
        """``(states, mu, controls, provenance)`` for the requested split.

        ``provenance`` rows are ``(trajectory, time)``.
        """
        idx = {"all": np.arange(self.n_traj), "train": self.train, "test": self.test}[which]
        Nt = self.Nt
        y = self.states[idx, :Nt].reshape(-1, self.states.shape[-1])
        u = self.controls[idx].reshape(len(idx) * Nt, -1)
        mu = np.repeat(self.mu[idx], Nt, axis=0)
        prov = np.column_stack([np.repeat(idx, Nt), np.tile(np.arange(Nt), len(idx))])
        return y, mu, u, prov


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ROMFBK_THREADS", "1")))
    except ValueError:
        return 1


def _solve_draw(args):
    y0c, mu, grid, cfg_fom, cfg_ocp = args
    scenario = Scenario(tuple(mu))
    y0 = gaussian_density(grid, y0c)
    try:
        return solve_ocp(y0, scenario, grid, cfg_fom, cfg_ocp, initial_center=tuple(y0c))
    except SolverError as exc:
        log.warning("dropping trajectory (mu=%s, y0=%s): %s", mu, y0c, exc)
        return None


def sample_draws(seed: int, Ns: int, target_box=TARGET_BOX, initial_box=INITIAL_BOX):
    """Uniform draws of initial centres and scenario vectors (open boxes)."""
    rng = np.random.default_rng(seed)
    lo0, hi0 = np.array(initial_box).T
    lo, hi = np.array(target_box).T
    y0c = lo0 + (hi0 - lo0) * rng.random((Ns, len(lo0)))
    mu = lo + (hi - lo) * rng.random((Ns, len(lo)))
    return y0c, mu


def generate_dataset(sampler_seed: int, Ns: int, grid: Grid, cfg_fom: FomConfig,
                     cfg_ocp: OcpConfig, test_fraction: float = 0.2, target_box=TARGET_BOX,
                     initial_box=INITIAL_BOX, threads: int | None = None) -> SnapshotSet:
    """Solve one OCP per random draw and collect the optimal trajectories.

    Draws run in parallel over ``threads`` workers (``ROMFBK_THREADS`` by
    default) but are assembled in draw order. Failed solves are dropped.
    """
    if Ns < 2:
        raise ValueError("Ns must be at least 2")
    y0c, mu = sample_draws(sampler_seed, Ns, target_box, initial_box)
    jobs = [(y0c[i], mu[i], grid, cfg_fom, cfg_ocp) for i in range(Ns)]
    threads = threads or _threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            trajs = list(pool.map(_solve_draw, jobs))
    else:
        trajs = [_solve_draw(j) for j in jobs]
    keep = [i for i, t in enumerate(trajs) if t is not None]
    trajs = [trajs[i] for i in keep]
    if len(trajs) < 2:
        raise RuntimeError("fewer than two trajectories survived generation")
    n = len(trajs)
    n_test = max(1, int(round(test_fraction * n))) if test_fraction > 0 else 0
    perm = np.random.default_rng([sampler_seed, 1]).permutation(n)
    return SnapshotSet(
        nx=grid.nx, dt=cfg_fom.dt,
        states=np.stack([t.states for t in trajs]),
        controls=np.stack([t.controls for t in trajs]),
        mu=np.array([t.scenario.mu for t in trajs]),
        initial_centers=np.array([t.initial_center for t in trajs]),
        costs=np.array([t.cost for t in trajs]),
        test=np.sort(perm[:n_test]),
        source=np.arange(n),
        meta={"sampler_seed": int(sampler_seed), "Ns": int(Ns), "dropped": int(Ns - n),
              "warnings": int(sum(t.info.get("warning") is not None for t in trajs)),
              "iterations": [int(t.info["iterations"]) for t in trajs]},
    )


def symmetry_augment(ds: SnapshotSet) -> SnapshotSet:
    """Append the mirror image about x2 = 0 of every trajectory.

    A mirrored trajectory joins the same split as its source so the two never
    straddle the train/test boundary.
    """
    if ds.nx % 2:
        raise ValueError("mirror augmentation needs an even grid")
    if ds.mu.shape[1] != 2:
        raise ValueError("background-flow scenarios are not mirror symmetric")
    grid = Grid(ds.nx)
    n = ds.n_traj
    mu_m = ds.mu.copy()
    mu_m[:, 1] *= -1.0
    ic_m = ds.initial_centers.copy()
    ic_m[:, 1] *= -1.0
    return SnapshotSet(
        nx=ds.nx, dt=ds.dt,
        states=np.concatenate([ds.states, mirror_state(ds.states, grid)]),
        controls=np.concatenate([ds.controls, mirror_control(ds.controls, grid)]),
        mu=np.concatenate([ds.mu, mu_m]),
        initial_centers=np.concatenate([ds.initial_centers, ic_m]),
        costs=np.concatenate([ds.costs, ds.costs]),
        test=np.sort(np.concatenate([ds.test, ds.test + n])),
        source=np.concatenate([ds.source, ds.source]),
        meta={**ds.meta, "augmented": int(ds.meta.get("augmented", 0)) + 1},
    )

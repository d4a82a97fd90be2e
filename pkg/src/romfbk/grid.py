"""Cell-centred finite-volume model of the controlled Fokker-Planck equation.

Densities (state fields) are flat arrays of length ``N = nx**2`` holding cell
averages; velocity fields (controls and background flows) are arrays of shape
``(2, N)``. The domain is fixed to ``(-1, 1)**2``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

#: variance of the initial and target densities used throughout the test cases
DEFAULT_VARIANCE = 0.05


class SolverError(RuntimeError):
    """Raised when the implicit diffusion solve fails to converge."""


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform ``nx x nx`` grid over ``(-1, 1)**2``; cell ``k = j * nx + i``."""

    nx: int
    h: float = field(init=False)
    centers: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h = 2.0 / self.nx
        # (i + 0.5 - nx/2) is an exact half-integer, so mirrored centres are exact negatives
        c = (np.arange(self.nx) + 0.5 - self.nx / 2) * h
        x1, x2 = np.meshgrid(c, c)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "centers", np.column_stack([x1.ravel(), x2.ravel()]))

    @property
    def n_cells(self) -> int:
        return self.nx * self.nx

    @property
    def x1(self) -> np.ndarray:
        return self.centers[:, 0]

    @property
    def x2(self) -> np.ndarray:
        return self.centers[:, 1]

    def boundary_faces(self) -> np.ndarray:
        """Number of faces each cell shares with the domain boundary (0, 1 or 2)."""
        b = np.zeros((self.nx, self.nx))
        b[0, :] += 1
        b[-1, :] += 1
        b[:, 0] += 1
        b[:, -1] += 1
        return b.ravel()

    def mirror_index(self) -> np.ndarray:
        """Permutation mapping each cell to its reflection about x2 = 0."""
        idx = np.arange(self.n_cells).reshape(self.nx, self.nx)
        return idx[::-1].ravel()

    def __eq__(self, other):
        return isinstance(other, Grid) and other.nx == self.nx

    def __hash__(self):
        return hash(("Grid", self.nx))


@dataclass(frozen=True)
class FomConfig:
    """Time discretisation and diffusion coefficient of the full-order model."""

    nu: float = 0.001
    dt: float = 0.25
    T: float = 1.0
    substeps: int = 16
    cg_tol: float = 1e-10

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError(f"nu must be non-negative, got {self.nu}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.substeps < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")
        if self.T < 0:
            raise ValueError(f"T must be non-negative, got {self.T}")
        nt = self.T / self.dt
        if abs(nt - round(nt)) > 1e-9 * max(1.0, nt):
            raise ValueError(f"T={self.T} is not an integer multiple of dt={self.dt}")

    @property
    def Nt(self) -> int:
        return int(round(self.T / self.dt))


@dataclass(frozen=True)
class Scenario:
    """Scenario parameters.

    ``mu[:2]`` is the target centre. A four-component ``mu`` additionally
    carries the background-flow intensity and angle ``(gamma_in, alpha_in)``.
    """

    mu: tuple[float, ...]

    def __post_init__(self):
        if len(self.mu) not in (2, 4):
            raise ValueError(f"scenario vector must have 2 or 4 entries, got {len(self.mu)}")
        object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))

    @property
    def target_center(self) -> tuple[float, float]:
        return self.mu[0], self.mu[1]

    @property
    def has_flow(self) -> bool:
        return len(self.mu) == 4

    def mirrored(self) -> "Scenario":
        if self.has_flow:
            raise ValueError("scenarios with a background flow are not mirror symmetric")
        return Scenario((self.mu[0], -self.mu[1]))

    def inside(self, box: Sequence[tuple[float, float]]) -> bool:
        return len(box) == len(self.mu) and all(lo <= m <= hi for m, (lo, hi) in zip(self.mu, box))


#: default parameter boxes: target centres and initial centres
TARGET_BOX = ((0.0, 0.5), (-0.5, 0.5))
INITIAL_BOX = ((-0.5, 0.0), (-0.5, 0.5))
#: flow-variant box appended to TARGET_BOX: (gamma_in, alpha_in)
FLOW_BOX = ((0.1, 1.0), (-1.0, 1.0))


def build_grid(nx: int) -> Grid:
    if int(nx) != nx or nx < 8 or nx % 2:
        raise ValueError(f"nx must be an even integer >= 8, got {nx}")
    return Grid(int(nx))


def gaussian_density(grid: Grid, center, variance: float = DEFAULT_VARIANCE) -> np.ndarray:
    """Isotropic Gaussian density sampled at cell centres.

    With ``variance=0.05`` this is ``10/pi * exp(-10 |x - center|^2)``.
    """
    c1, c2 = float(center[0]), float(center[1])
    if not (-1.0 < c1 < 1.0 and -1.0 < c2 < 1.0):
        raise ValueError(f"center {center} lies outside (-1, 1)^2")
    if variance <= 0:
        raise ValueError("variance must be positive")
    a = 1.0 / (2.0 * variance)
    r2 = (grid.x1 - c1) ** 2 + (grid.x2 - c2) ** 2
    return (a / math.pi) * np.exp(-a * r2)


def background_flow(grid: Grid, gamma_in: float, alpha_in: float) -> np.ndarray:
    """Analytic stand-in for the steady channel flow.

    ``v(x) = ((x1 + 1)(1 - x1) gamma sin(alpha), gamma cos(alpha))``. The
    horizontal part vanishes on the side walls. The field is not
    divergence-free for ``sin(alpha) != 0``; the conservative flux form keeps
    mass exact regardless.
    """
    if gamma_in < 0:
        raise ValueError("gamma_in must be non-negative")
    x1 = grid.x1
    v = np.empty((2, grid.n_cells))
    v[0] = (x1 + 1.0) * (1.0 - x1) * gamma_in * math.sin(alpha_in)
    v[1] = gamma_in * math.cos(alpha_in)
    return v


def scenario_flow(grid: Grid, scenario: Scenario) -> np.ndarray:
    if scenario.has_flow:
        return background_flow(grid, scenario.mu[2], scenario.mu[3])
    return np.zeros((2, grid.n_cells))


def total_mass(y: np.ndarray, grid: Grid) -> float:
    return float(np.sum(y) * grid.h**2)


def cfl_number(w: np.ndarray, grid: Grid, dt: float) -> float:
    """``(max|w_x| + max|w_y|) dt / h``; an upwind sub-step is positive when <= 1."""
    return float((np.max(np.abs(w[0])) + np.max(np.abs(w[1]))) * dt / grid.h)


def _diffusion_coeff(grid: Grid, cfg: FomConfig) -> float:
    return cfg.dt * cfg.nu / grid.h**2


def implicit_solve(b: np.ndarray, grid: Grid, cfg: FomConfig) -> np.ndarray:
    """Apply ``(I + dt*nu/h^2 L)^{-1}``; the operator is symmetric, so this is its own adjoint."""
    c = _diffusion_coeff(grid, cfg)
    if c == 0.0:
        return b.copy()
    x, it, res = kernels.cg_solve(b, grid.nx, c, cfg.cg_tol, 10 * grid.n_cells)
    if res > cfg.cg_tol:
        raise SolverError(f"CG stalled after {it} iterations, relative residual {res:.3e}")
    return x


#: hard cap on advection sub-steps per time step
MAX_SUBSTEPS = 1 << 16


def n_substeps(w: np.ndarray, grid: Grid, cfg: FomConfig) -> int:
    """Sub-step count: ``cfg.substeps``, raised until every sub-step satisfies CFL <= 1."""
    cfl = cfl_number(w, grid, cfg.dt)
    if not np.isfinite(cfl):
        raise SolverError("non-finite velocity field")
    n = max(cfg.substeps, math.ceil(cfl))
    if n > MAX_SUBSTEPS:
        raise SolverError(f"velocity too large: {n} advection sub-steps needed")
    return n


def advect_substeps(y: np.ndarray, w: np.ndarray, grid: Grid, cfg: FomConfig) -> np.ndarray:
    """Explicit upwind sub-steps of one time step; returns all ``n_substeps + 1`` iterates."""
    n = n_substeps(w, grid, cfg)
    k = cfg.dt / (n * grid.h)
    z = np.empty((n + 1, grid.n_cells))
    z[0] = y
    for s in range(n):
        z[s + 1] = z[s] - k * kernels.advect(z[s], w[0], w[1], grid.nx)
    return z


def step(y: np.ndarray, u: np.ndarray, v: np.ndarray | None, grid: Grid, cfg: FomConfig,
         warn_cfl: bool = True) -> np.ndarray:
    """Advance the density by one semi-implicit Euler step.

    The velocity ``u + v`` is frozen over the step. Advection is explicit
    first-order upwind, split into ``cfg.substeps`` equal sub-steps so the
    stencil can carry mass further than one cell per step; diffusion is then
    solved implicitly, ``(I + dt nu/h^2 L) y' = y_adv``. No flux crosses the
    boundary. Fast velocities get extra sub-steps so each stays within CFL <= 1,
    which keeps the update positive and stable.
    """
    w = u if v is None else u + v
    if warn_cfl and cfl_number(w, grid, cfg.dt / cfg.substeps) > 1.0:
        log.debug("CFL above 1 at %d sub-steps; refining to %d", cfg.substeps,
                  n_substeps(w, grid, cfg))
    return implicit_solve(advect_substeps(y, w, grid, cfg)[-1], grid, cfg)


def step_vjp(y: np.ndarray, w: np.ndarray, ybar: np.ndarray, grid: Grid, cfg: FomConfig):
    """Vector-Jacobian product of :func:`step` with cotangent ``ybar`` on its output.

    Returns ``(ybar_in, wbar)``, the cotangents of the input density and of
    the total velocity ``w``.
    """
    z = advect_substeps(y, w, grid, cfg)
    n = z.shape[0] - 1
    k = cfg.dt / (n * grid.h)
    lam = implicit_solve(ybar, grid, cfg)
    wbar = np.zeros_like(w)
    for s in range(n - 1, -1, -1):
        gy, gwx, gwy = kernels.advect_adjoint(lam, z[s], w[0], w[1], grid.nx)
        wbar[0] -= k * gwx
        wbar[1] -= k * gwy
        lam = lam - k * gy
    return lam, wbar


@dataclass
class Trajectory:
    """State/control history of one scenario: ``Nt + 1`` states and ``Nt`` controls."""

    scenario: Scenario
    initial_center: tuple[float, float]
    states: np.ndarray
    controls: np.ndarray
    cost: float = float("nan")
    info: dict = field(default_factory=dict)

    @property
    def Nt(self) -> int:
        return self.controls.shape[0]


def simulate(y0: np.ndarray, controls, scenario: Scenario, grid: Grid, cfg: FomConfig,
             initial_center=(float("nan"), float("nan"))) -> Trajectory:
    """Run the full-order model under a given control sequence."""
    controls = np.asarray(controls, dtype=float).reshape(-1, 2, grid.n_cells)
    if controls.shape[0] != cfg.Nt:
        raise ValueError(f"expected {cfg.Nt} controls, got {controls.shape[0]}")
    v = scenario_flow(grid, scenario)
    states = np.empty((cfg.Nt + 1, grid.n_cells))
    states[0] = y0
    for j in range(cfg.Nt):
        states[j + 1] = step(states[j], controls[j], v, grid, cfg)
    return Trajectory(scenario, tuple(initial_center), states, controls)


def mirror_state(y: np.ndarray, grid: Grid) -> np.ndarray:
    return y[..., grid.mirror_index()]


def mirror_control(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Reflect a velocity field about x2 = 0 (the x2 component changes sign)."""
    m = u[..., grid.mirror_index()].copy()
    m[..., 1, :] *= -1.0
    return m

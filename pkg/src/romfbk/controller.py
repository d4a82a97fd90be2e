"""Online phase: full-order and latent feedback loops, noise, and evaluation metrics."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .grid import (DEFAULT_VARIANCE, FomConfig, Grid, Scenario, SolverError, build_grid,
                   gaussian_density, scenario_flow, simulate, step)
from .ocp import OcpConfig, solve_ocp
from .reduction import decode, encode
from .training import ControllerModel

log = logging.getLogger(__name__)

MODES = ("full_order", "latent")


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")


@dataclass
class LoopReport:
    """Per-step record of one closed-loop run.

    ``states`` holds the plant states (full-order mode) or the shadow-plant
    states (latent mode, ``None`` without a plant). ``distances`` are taken
    on those states, or on the decoded latent states when no plant ran.
    Wall-clock fields are ``t_inference`` and ``t_plant``.
    """

    mode: str
    mu: np.ndarray
    controls: np.ndarray            # (Nt, 2, N)
    distances: np.ndarray           # (Nt + 1,)
    states: np.ndarray | None = None          # (Nt + 1, N)
    latent_states: np.ndarray | None = None   # (Nt + 1, N_y)
    t_inference: float = 0.0
    t_plant: float = 0.0
    aborted: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown loop mode {self.mode!r}")

    @property
    def Nt(self) -> int:
        return self.controls.shape[0]

    @property
    def final_distance(self) -> float:
        return float(self.distances[-1])


def tracking_distance(y, yd, grid: Grid) -> float:
    """Discrete L2 distance ``h * ||y - y_d||_2``."""
    return float(grid.h * np.linalg.norm(np.asarray(y) - yd))


def add_noise(y, spec: NoiseSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """``y + eps`` with i.i.d. ``N(0, sigma^2)`` per cell; negative values are kept."""
    y = np.asarray(y, dtype=float)
    if spec.sigma == 0:
        return y.copy()
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    return y + spec.sigma * rng.standard_normal(y.shape)


def arrival_probability(yT, target_center, radius: float = 0.5, grid: Grid | None = None) -> float:
    """Mass of ``yT`` in cells whose centres lie in the ball of ``radius`` around the target."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    yT = np.asarray(yT, dtype=float)
    if grid is None:
        grid = build_grid(int(round(np.sqrt(yT.size))))
    r2 = (grid.x1 - target_center[0]) ** 2 + (grid.x2 - target_center[1]) ** 2
    p = float(np.sum(yT[r2 <= radius**2]) * grid.h**2)
    return min(max(p, 0.0), max(float(np.sum(yT) * grid.h**2), 0.0))


def _grid_for(model: ControllerModel, y) -> Grid:
    n = int(model.meta.get("nx", round(np.sqrt(np.size(y)))))
    if n * n != np.size(y):
        raise ValueError(f"state of size {np.size(y)} does not match the model grid nx={n}")
    return build_grid(n)


def _check_box(model: ControllerModel, mu):
    box = model.meta.get("mu_box")
    if box is None:
        return
    mu = np.asarray(mu, dtype=float)
    lo, hi = np.asarray(box, dtype=float).T
    if mu.shape != lo.shape:
        raise ValueError(f"scenario has {mu.size} entries, model expects {lo.size}")
    if np.any(mu < lo) or np.any(mu > hi):
        log.warning("scenario %s lies outside the training box; extrapolating", mu.tolist())


def _act(model: ControllerModel, y, mu):
    uN = model.policy_latent(encode(model.state_reducer, np.atleast_2d(y)), mu)
    return uN, decode(model.control_reducer, uN)[0].reshape(2, -1)


def policy_act(model: ControllerModel, y, mu) -> np.ndarray:
    """Full-order control ``decode_u(pi_N(encode_y(y), mu))`` of shape ``(2, N)``."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("policy_act expects a single state vector")
    _grid_for(model, y)
    _check_box(model, mu)
    return _act(model, y, mu)[1]


def _setup(model, y0, mu, cfg_fom, grid):
    y0 = np.asarray(y0, dtype=float)
    grid = grid or _grid_for(model, y0)
    _check_box(model, mu)
    scen = Scenario(tuple(np.asarray(mu, dtype=float)))
    return y0, grid, scen, gaussian_density(grid, scen.target_center, DEFAULT_VARIANCE)


def run_full_order_loop(model: ControllerModel, y0, mu, cfg_fom: FomConfig,
                        noise: NoiseSpec = NoiseSpec(), grid: Grid | None = None) -> LoopReport:
    """Observe (with noise), act, advance the plant one step; repeat ``Nt`` times."""
    y0, grid, scen, yd = _setup(model, y0, mu, cfg_fom, grid)
    v = scenario_flow(grid, scen)
    rng = np.random.default_rng(noise.seed)
    Nt = cfg_fom.Nt
    states = np.empty((Nt + 1, grid.n_cells))
    controls = np.zeros((Nt, 2, grid.n_cells))
    states[0] = y0
    t_inf = t_plant = 0.0
    aborted, done = None, 0
    for j in range(Nt):
        obs = add_noise(states[j], noise, rng)
        t0 = time.perf_counter()
        controls[j] = _act(model, obs, scen.mu)[1]
        t1 = time.perf_counter()
        try:
            states[j + 1] = step(states[j], controls[j], v, grid, cfg_fom)
        except SolverError as exc:
            aborted = str(exc)
            log.error("plant step %d failed: %s", j, exc)
            break
        finally:
            t_inf += t1 - t0
            t_plant += time.perf_counter() - t1
        done = j + 1
    dist = np.array([tracking_distance(s, yd, grid) for s in states[:done + 1]])
    return LoopReport("full_order", np.array(scen.mu), controls[:done], dist, states[:done + 1],
                      None, t_inf, t_plant, aborted, {"sigma": noise.sigma, "seed": noise.seed})


def run_latent_loop(model: ControllerModel, y0, mu, cfg_fom: FomConfig | None = None,
                    noise: NoiseSpec = NoiseSpec(), grid: Grid | None = None,
                    Nt: int | None = None) -> LoopReport:
    """Close the loop through the latent forward model after observing ``y0`` once.

    With ``cfg_fom`` a shadow plant is driven by the emitted controls for
    evaluation only; it never feeds back into the controller.
    """
    if model.forward_model is None:
        raise RuntimeError("forward model absent")
    y0, grid, scen, yd = _setup(model, y0, mu, cfg_fom, grid)
    if Nt is None:
        if cfg_fom is None:
            raise ValueError("Nt is required when no plant configuration is given")
        Nt = cfg_fom.Nt
    rng = np.random.default_rng(noise.seed)
    obs = add_noise(y0, noise, rng)
    controls = np.zeros((Nt, 2, grid.n_cells))
    t0 = time.perf_counter()
    yN = np.empty((Nt + 1, model.latent_state))
    yN[0] = encode(model.state_reducer, np.atleast_2d(obs))[0]
    for j in range(Nt):
        if j == 0:
            uN, controls[0] = _act(model, obs, scen.mu)
        else:
            uN = model.policy_latent(yN[j], scen.mu)
            controls[j] = decode(model.control_reducer, uN)[0].reshape(2, -1)
        yN[j + 1] = model.forward_latent(yN[j], uN, scen.mu)[0]
    t_inf = time.perf_counter() - t0
    states, t_plant, aborted = None, 0.0, None
    if cfg_fom is not None:
        t1 = time.perf_counter()
        try:
            states = simulate(y0, controls, scen, grid, cfg_fom).states
        except SolverError as exc:
            aborted = str(exc)
            log.error("shadow plant failed: %s", exc)
        t_plant = time.perf_counter() - t1
    track = states if states is not None else decode(model.state_reducer, yN)
    dist = np.array([tracking_distance(s, yd, grid) for s in track])
    return LoopReport("latent", np.array(scen.mu), controls, dist, states, yN, t_inf, t_plant,
                      aborted, {"sigma": noise.sigma, "seed": noise.seed})


def uncontrolled_distance(y0, mu, grid: Grid, cfg_fom: FomConfig) -> float:
    """Final tracking distance under zero control (the background flow still acts)."""
    scen = Scenario(tuple(mu))
    yT = simulate(y0, np.zeros((cfg_fom.Nt, 2, grid.n_cells)), scen, grid, cfg_fom).states[-1]
    return tracking_distance(yT, gaussian_density(grid, scen.target_center), grid)


def benchmark(model: ControllerModel, scenarios, cfg_fom: FomConfig,
              cfg_ocp: OcpConfig | None = None, repeats: int = 1) -> dict:
    """Mean wall-clock per run of the full-order loop, latent loop and open-loop OCP solve.

    ``scenarios`` is a sequence of ``(y0_center, mu)`` pairs. Speed-ups are
    ratios of mean wall-clock times, e.g. ``ocp_over_full = t_ocp / t_full``.
    """
    scenarios = list(scenarios)
    if len(scenarios) < 3:
        raise ValueError("benchmark needs at least three scenarios")
    grid = build_grid(int(model.meta["nx"]))
    cfg_ocp = cfg_ocp or OcpConfig()
    t_full, t_lat, t_ocp = [], [], []
    for c0, mu in scenarios:
        y0 = gaussian_density(grid, c0)
        for _ in range(repeats):
            t = time.perf_counter()
            run_full_order_loop(model, y0, mu, cfg_fom, grid=grid)
            t_full.append(time.perf_counter() - t)
            if model.forward_model is not None:
                t = time.perf_counter()
                run_latent_loop(model, y0, mu, None, grid=grid, Nt=cfg_fom.Nt)
                t_lat.append(time.perf_counter() - t)
        t = time.perf_counter()
        solve_ocp(y0, Scenario(tuple(mu)), grid, cfg_fom, cfg_ocp)
        t_ocp.append(time.perf_counter() - t)
    table = {"n_scenarios": len(scenarios), "t_full": float(np.mean(t_full)),
             "t_latent": float(np.mean(t_lat)) if t_lat else float("nan"),
             "t_ocp": float(np.mean(t_ocp))}
    table["ocp_over_full"] = table["t_ocp"] / table["t_full"]
    table["full_over_latent"] = table["t_full"] / table["t_latent"]
    table["ocp_over_latent"] = table["t_ocp"] / table["t_latent"]
    return table

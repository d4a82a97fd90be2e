"""Stage functions shared by the CLI and the acceptance runs."""
from __future__ import annotations

import dataclasses
import time

import numpy as np

from .config import RunConfig
from .controller import (NoiseSpec, arrival_probability, benchmark, run_full_order_loop,
                         uncontrolled_distance)
from .grid import FomConfig, build_grid, gaussian_density
from .ocp import SnapshotSet, generate_dataset, sample_draws, symmetry_augment
from .training import ControllerModel, evaluate_model, train_controller


def generate(cfg: RunConfig) -> SnapshotSet:
    grid = build_grid(cfg.nx)
    t0 = time.perf_counter()
    ds = generate_dataset(cfg.sub_seed("sampler"), cfg.Ns, grid, cfg.fom, cfg.ocp,
                          cfg.test_fraction, cfg.target_box, cfg.initial_box)
    if cfg.augment:
        ds = symmetry_augment(ds)
    ds.meta["target_box"] = cfg.mu_box
    ds.meta["fom"] = dataclasses.asdict(cfg.fom)
    ds.meta["t_generate"] = time.perf_counter() - t0
    return ds


def train(cfg: RunConfig, ds: SnapshotSet) -> ControllerModel:
    if ds.nx != cfg.nx or abs(ds.dt - cfg.fom.dt) > 1e-15 or ds.Nt != cfg.fom.Nt:
        raise ValueError("dataset grid or time step disagrees with the configuration")
    weights = cfg.stage2 if cfg.with_forward else cfg.stage1
    model = train_controller(ds, weights, cfg.train_config(), cfg.with_forward, cfg.arch,
                             stage1_weights=cfg.stage1)
    model.meta["fom"] = dataclasses.asdict(cfg.fom)
    return model


def fom_for(model: ControllerModel, cfg: RunConfig | None = None) -> FomConfig:
    """Plant settings: the run config when given, else those stored with the model."""
    if cfg is not None:
        return cfg.fom
    if "fom" in model.meta:
        return FomConfig(**model.meta["fom"])
    return FomConfig(dt=model.meta["dt"], T=model.meta["dt"] * model.meta["Nt"])


def eval_scenarios(cfg: RunConfig, n: int | None = None):
    """Fresh ``(y0_center, mu)`` draws from the evaluation sub-seed."""
    n = cfg.n_eval if n is None else n
    c0, mu = sample_draws(cfg.sub_seed("eval"), n, cfg.target_box, cfg.initial_box)
    return list(zip(c0, mu))


def arrival_batch(model: ControllerModel, cfg: RunConfig, sigma: float | None = None,
                  n: int | None = None) -> dict:
    """Full-order closed loops on evaluation scenarios; arrival probabilities and distance ratios."""
    grid = build_grid(cfg.nx)
    fom = fom_for(model, cfg)
    sigma = cfg.noise.sigma if sigma is None else sigma
    noise_seed = cfg.sub_seed("noise")
    ap, ratio = [], []
    for k, (c0, mu) in enumerate(eval_scenarios(cfg, n)):
        y0 = gaussian_density(grid, c0)
        rep = run_full_order_loop(model, y0, mu, fom, NoiseSpec(sigma, noise_seed + k), grid)
        ap.append(arrival_probability(rep.states[-1], mu[:2], cfg.arrival_radius, grid))
        ratio.append(rep.final_distance / uncontrolled_distance(y0, mu, grid, fom))
    return {"arrival": np.array(ap), "distance_ratio": np.array(ratio)}


def evaluate(model: ControllerModel, ds: SnapshotSet, cfg: RunConfig) -> dict:
    rep = evaluate_model(model, ds)
    batch = arrival_batch(model, cfg)
    rep["arrival_median"] = float(np.median(batch["arrival"]))
    rep["arrival_mean"] = float(np.mean(batch["arrival"]))
    rep["distance_ratio_median"] = float(np.median(batch["distance_ratio"]))
    return rep


def bench(model: ControllerModel, cfg: RunConfig, n: int = 3) -> dict:
    return benchmark(model, eval_scenarios(cfg, max(3, n)), fom_for(model, cfg), cfg.ocp)


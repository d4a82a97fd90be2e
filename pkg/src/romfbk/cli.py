"""Command-line entry point: generate -> train -> control -> evaluate -> bench, plus CSV export."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, pipeline
from .config import RunConfig, load_config
from .controller import NoiseSpec, run_full_order_loop, run_latent_loop
from .grid import build_grid, gaussian_density

log = logging.getLogger("romfbk")


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _loss_csv_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".loss.csv")


def cmd_generate(args, outputs):
    cfg = _config(args)
    if args.seed is not None:
        cfg.seed = args.seed
    ds = pipeline.generate(cfg)
    outputs.append(args.out)
    io.save_dataset(ds, args.out)
    print(f"dataset: {ds.n_traj} trajectories, {len(ds)} triplets, "
          f"{len(ds.test)} test trajectories -> {args.out}")


def cmd_train(args, outputs):
    cfg = _config(args)
    if args.seed is not None:
        cfg.seed = args.seed
    ds = io.load_dataset(args.dataset)
    model = pipeline.train(cfg, ds)
    outputs.append(args.out)
    io.save_model(model, args.out)
    loss_path = _loss_csv_path(args.out)
    outputs.append(loss_path)
    rows = [(stage, i, float(v)) for stage, h in model.history.items()
            for i, v in enumerate(h["loss"])]
    io.write_table_csv(loss_path, ["stage", "iteration", "loss"], rows)
    for stage, h in model.history.items():
        print(f"{stage}: {h['iterations']} iterations, loss {h['loss'][0]:.6g} -> {h['loss'][-1]:.6g}")
    print(f"model -> {args.out}, loss history -> {loss_path}")


def cmd_control(args, outputs):
    model = io.load_model(args.model)
    cfg = load_config(args.config) if args.config else None
    fom = pipeline.fom_for(model, cfg)
    if args.y0 is None or args.scenario is None:
        raise ValueError("control needs --y0 and --scenario")
    if len(args.scenario) not in (2, 4):
        raise ValueError("--scenario takes 2 values (target centre) or 4 (with gamma, alpha)")
    grid = build_grid(int(model.meta["nx"]))
    y0 = gaussian_density(grid, args.y0)
    noise = NoiseSpec(args.sigma, args.seed if args.seed is not None else 0)
    mu = np.array(args.scenario, dtype=float)
    if args.mode == "latent":
        rep = run_latent_loop(model, y0, mu, fom, noise, grid)
    else:
        rep = run_full_order_loop(model, y0, mu, fom, noise, grid)
    outputs.append(args.out)
    io.save_report(rep, args.out)
    print("step,distance")
    for j, d in enumerate(rep.distances):
        print(f"{j},{d:.6g}")
    if rep.aborted:
        raise RuntimeError(f"plant failed: {rep.aborted}")


def cmd_evaluate(args, outputs):
    cfg = _config(args)
    model = io.load_model(args.model)
    ds = io.load_dataset(args.dataset)
    rep = pipeline.evaluate(model, ds, cfg)
    if args.out:
        outputs.append(args.out)
        io.write_table_csv(args.out, ["metric", "value"], [(k, float(v)) for k, v in rep.items()])
    print("metric,value")
    for k, v in rep.items():
        print(f"{k},{v:.17g}")


def cmd_bench(args, outputs):
    cfg = _config(args)
    model = io.load_model(args.model)
    table = pipeline.bench(model, cfg)
    if args.out:
        outputs.append(args.out)
        io.write_table_csv(args.out, ["quantity", "value"], [(k, float(v)) for k, v in table.items()])
    for k, v in table.items():
        print(f"{k},{v:.6g}")


def cmd_export(args, outputs):
    outputs.append(args.out)
    io.export_csv(args.artifact, args.out)
    print(f"{args.artifact} -> {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="romfbk", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(fn=fn)
        return sp

    g = add("generate", cmd_generate, "solve OCPs and write a snapshot dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)

    t = add("train", cmd_train, "train reducers, policy and forward model")
    t.add_argument("--config")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)

    c = add("control", cmd_control, "run one closed-loop experiment")
    c.add_argument("--model", required=True)
    c.add_argument("--config")
    c.add_argument("--mode", choices=("full", "latent"), default="full")
    c.add_argument("--y0", type=float, nargs=2, metavar=("X1", "X2"))
    c.add_argument("--scenario", type=float, nargs="+", metavar="MU")
    c.add_argument("--sigma", type=float, default=0.0)
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True)

    e = add("evaluate", cmd_evaluate, "test-set errors and arrival-probability batch")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--config")
    e.add_argument("--out")

    b = add("bench", cmd_bench, "timing of full-order loop, latent loop and OCP solve")
    b.add_argument("--model", required=True)
    b.add_argument("--config")
    b.add_argument("--out")

    x = add("export-csv", cmd_export, "flatten any artifact to CSV")
    x.add_argument("artifact")
    x.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    outputs: list = []
    try:
        args.fn(args, outputs)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        for path in outputs:
            Path(path).unlink(missing_ok=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

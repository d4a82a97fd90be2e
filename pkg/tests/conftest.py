"""Shared fixtures, the plant-step mass audit and the acceptance summary."""
from __future__ import annotations

import time
from importlib.resources import files

import numpy as np
import pytest

from romfbk import controller, grid as grid_mod, io, pipeline
from romfbk.config import RunConfig, load_config

# ---------------------------------------------------------------------------- mass audit
#
# Every plant step taken anywhere in the suite goes through this wrapper, which
# checks conservation of total mass. The scale is sum|y| h^2, which equals the
# total mass for the non-negative densities the plant normally carries and stays
# meaningful for the signed fields some property tests feed in.

MASS_TOL = 1e-10
MASS_AUDIT = {"steps": 0, "worst": 0.0, "violations": []}
_raw_step = grid_mod.step


def _audited_step(y, u, v, grid, cfg, warn_cfl=True):
    out = _raw_step(y, u, v, grid, cfg, warn_cfl)
    scale = float(np.sum(np.abs(y))) * grid.h**2
    err = abs(grid_mod.total_mass(out, grid) - grid_mod.total_mass(y, grid))
    rel = err / scale if scale > 0 else err
    MASS_AUDIT["steps"] += 1
    MASS_AUDIT["worst"] = max(MASS_AUDIT["worst"], rel)
    if rel > MASS_TOL:
        MASS_AUDIT["violations"].append(rel)
    return out


@pytest.fixture(scope="session", autouse=True)
def _patch_plant_step():
    # session scope so steps taken while building session fixtures are audited too
    mp = pytest.MonkeyPatch()
    mp.setattr(grid_mod, "step", _audited_step)
    mp.setattr(controller, "step", _audited_step)
    yield
    mp.undo()


@pytest.fixture(autouse=True)
def mass_audit(_patch_plant_step):
    before = len(MASS_AUDIT["violations"])
    yield
    bad = MASS_AUDIT["violations"][before:]
    assert not bad, f"plant step lost mass: relative error {max(bad):.3e}"


# ---------------------------------------------------------------------------- acceptance lines

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, ok: bool, detail: str):
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE and not MASS_AUDIT["steps"]:
        return
    tr = terminalreporter
    if "C2" in ACCEPTANCE:
        # the criterion covers every plant step of the run, so report the final tally
        ok = not MASS_AUDIT["violations"]
        ACCEPTANCE["C2"] = (ok, f"{MASS_AUDIT['steps']} plant steps in this run, worst relative "
                                f"drift {MASS_AUDIT['worst']:.2e} (<= {MASS_TOL:g})")
    tr.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE[key]
        tr.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")
    tr.write_line(f"mass audit: {MASS_AUDIT['steps']} plant steps, worst relative drift "
                  f"{MASS_AUDIT['worst']:.2e}")


# ---------------------------------------------------------------------------- data fixtures

DATA = files("romfbk") / "data"


@pytest.fixture(scope="session")
def smoke_cfg() -> RunConfig:
    return load_config(DATA / "smoke_config.json")


@pytest.fixture(scope="session")
def smoke_ds():
    return io.load_dataset(DATA / "smoke_dataset.bin")


@pytest.fixture(scope="session")
def smoke_model(smoke_cfg, smoke_ds):
    return pipeline.train(smoke_cfg, smoke_ds)


@pytest.fixture(scope="session")
def smoke_model_path(smoke_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("smoke") / "model.bin"
    io.save_model(smoke_model, path)
    return path


@pytest.fixture(scope="session")
def desk():
    """The default desk-scale pipeline: generate, train, timed end to end."""
    cfg = RunConfig()
    t0 = time.perf_counter()
    ds = pipeline.generate(cfg)
    t1 = time.perf_counter()
    model = pipeline.train(cfg, ds)
    t2 = time.perf_counter()
    return {"cfg": cfg, "ds": ds, "model": model, "t_generate": t1 - t0, "t_train": t2 - t1}

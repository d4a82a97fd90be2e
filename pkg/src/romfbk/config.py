"""Run configuration: every module's settings plus one global seed, as a JSON document."""
from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import NoiseSpec
from .grid import FLOW_BOX, INITIAL_BOX, TARGET_BOX, FomConfig
from .neural import TrainConfig
from .ocp import OcpConfig
from .training import STAGE1_WEIGHTS, STAGE2_WEIGHTS, Architecture, LossWeights

SUB_SEEDS = ("sampler", "init", "noise", "eval")


def _box():
    return [list(b) for b in TARGET_BOX]


@dataclass
class RunConfig:
    seed: int = 0
    nx: int = 32
    Ns: int = 20
    test_fraction: float = 0.2
    augment: bool = True
    flow: bool = False
    target_box: list = field(default_factory=_box)
    initial_box: list = field(default_factory=lambda: [list(b) for b in INITIAL_BOX])
    n_eval: int = 10
    arrival_radius: float = 0.5
    with_forward: bool = True
    fom: FomConfig = field(default_factory=FomConfig)
    ocp: OcpConfig = field(default_factory=OcpConfig)
    arch: Architecture = field(default_factory=Architecture)
    train: TrainConfig = field(default_factory=TrainConfig)
    stage1: LossWeights = STAGE1_WEIGHTS
    stage2: LossWeights = STAGE2_WEIGHTS
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if int(self.nx) != self.nx or self.nx < 8 or self.nx % 2:
            raise ValueError(f"nx must be an even integer >= 8, got {self.nx}")
        if self.Ns < 2:
            raise ValueError("Ns must be at least 2")
        if not 0 <= self.test_fraction < 1:
            raise ValueError("test_fraction must lie in [0, 1)")
        if self.fom.Nt < 1:
            raise ValueError("T / dt must give at least one time step")
        expected = len(TARGET_BOX) + (len(FLOW_BOX) if self.flow else 0)
        if len(self.target_box) != expected:
            raise ValueError(f"target_box needs {expected} intervals (flow={self.flow})")
        for lo, hi in list(self.target_box) + list(self.initial_box):
            if not lo < hi:
                raise ValueError(f"empty parameter interval ({lo}, {hi})")
        for lo, hi in list(self.initial_box) + list(self.target_box)[:2]:
            if lo <= -1 or hi >= 1:
                raise ValueError("density centres must stay inside (-1, 1)^2")
        if self.flow and self.augment:
            raise ValueError("mirror augmentation is invalid with a background flow")
        if self.arrival_radius <= 0 or self.n_eval < 1:
            raise ValueError("arrival_radius and n_eval must be positive")

    @property
    def mu_box(self) -> list:
        return [list(b) for b in self.target_box]

    def sub_seed(self, name: str) -> int:
        """Independent seed for a named stage derived from the global seed."""
        if name not in SUB_SEEDS:
            raise ValueError(f"unknown sub-seed {name!r}")
        ss = np.random.SeedSequence([int(self.seed), zlib.crc32(name.encode())])
        return int(ss.generate_state(1)[0])

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.sub_seed("init"))

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            d[f.name] = dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v
        return json.loads(json.dumps(d))  # tuples -> lists

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        nested = {"fom": FomConfig, "ocp": OcpConfig, "arch": Architecture, "train": TrainConfig,
                  "stage1": LossWeights, "stage2": LossWeights, "noise": NoiseSpec}
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k in nested:
                sub = nested[k]
                bad = set(v) - {f.name for f in dataclasses.fields(sub)}
                if bad:
                    raise ValueError(f"unknown keys in {k}: {sorted(bad)}")
                if sub is Architecture:
                    v = {kk: tuple(vv) if isinstance(vv, list) else vv for kk, vv in v.items()}
                kw[k] = sub(**v)
            else:
                kw[k] = v
        return cls(**kw)


def load_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ValueError("config document must be a JSON object")
    return RunConfig.from_dict(d)


def save_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")

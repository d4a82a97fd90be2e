"""Dense feed-forward networks with hand-written reverse-mode gradients.

Parameters of a network live in one flat float64 vector so that several
networks can be optimised jointly by slicing a shared vector. Hidden layers
use leaky-ReLU; the output layer is linear.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optim import OptimizeResult, adam, lbfgs

LEAKY_SLOPE = 0.01


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


@dataclass
class Mlp:
    layer_dims: list
    params: np.ndarray
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"invalid layer dims {self.layer_dims}")
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {self.params.shape}")

    @property
    def n_params(self) -> int:
        d = self.layer_dims
        return sum(d[i] * d[i + 1] + d[i + 1] for i in range(len(d) - 1))

    @property
    def n_in(self) -> int:
        return self.layer_dims[0]

    @property
    def n_out(self) -> int:
        return self.layer_dims[-1]

    def unpack(self, params=None):
        """List of ``(W, b)`` views, ``W`` shaped ``(fan_in, fan_out)``."""
        p = self.params if params is None else params
        out, o = [], 0
        for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            W = p[o:o + a * b].reshape(a, b)
            o += a * b
            out.append((W, p[o:o + b]))
            o += b
        return out

    def forward(self, x, params=None):
        """Evaluate on a batch ``x`` of shape ``(B, n_in)`` (or a single vector).

        Returns ``(output, cache)``; pass the cache to :meth:`backward`.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = np.atleast_2d(x)
        if a.shape[1] != self.n_in:
            raise ValueError(f"input width {a.shape[1]} != {self.n_in}")
        layers = self.unpack(params)
        acts, pres = [a], []
        for i, (W, b) in enumerate(layers):
            z = a @ W + b
            if i < len(layers) - 1:
                pres.append(z)
                a = np.where(z > 0, z, self.slope * z)
            else:
                a = z
            acts.append(a)
        return (a[0] if single else a), (acts, pres, single, params)

    def __call__(self, x, params=None):
        """Inference without keeping activations for a backward pass."""
        x = np.asarray(x, dtype=float)
        a = np.atleast_2d(x)
        if a.shape[1] != self.n_in:
            raise ValueError(f"input width {a.shape[1]} != {self.n_in}")
        layers = self.unpack(params)
        for W, b in layers[:-1]:
            z = a @ W + b
            a = np.where(z > 0, z, self.slope * z)
        W, b = layers[-1]
        a = a @ W + b
        return a[0] if x.ndim == 1 else a

    def backward(self, cache, gout):
        """Gradients of ``sum(gout * output)``: ``(flat parameter gradient, input gradient)``."""
        acts, pres, single, params = cache
        layers = self.unpack(params)
        g = np.atleast_2d(np.asarray(gout, dtype=float))
        grads = []
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            grads.append((acts[i].T @ g, g.sum(axis=0)))
            g = g @ W.T
            if i > 0:
                g = np.where(pres[i - 1] > 0, g, self.slope * g)
        flat = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in reversed(grads)])
        return flat, (g[0] if single else g)

    def copy(self) -> "Mlp":
        return Mlp(list(self.layer_dims), self.params.copy(), self.slope)


def init_he(layer_dims, seed, slope: float = LEAKY_SLOPE) -> Mlp:
    """He-normal weights (std ``sqrt(2 / fan_in)``) and zero biases."""
    if not layer_dims:
        raise ValueError("layer_dims must not be empty")
    rng = np.random.default_rng(seed)
    chunks = []
    for a, b in zip(layer_dims[:-1], layer_dims[1:]):
        chunks.append(rng.normal(0.0, np.sqrt(2.0 / a), size=a * b))
        chunks.append(np.zeros(b))
    return Mlp(list(layer_dims), np.concatenate(chunks), slope)


def identity_mlp(dim: int, n_hidden: int = 1, slope: float = LEAKY_SLOPE) -> Mlp:
    """An exact identity map through ``n_hidden`` leaky-ReLU layers of width ``2 * dim``.

    Uses ``leaky(x) - leaky(-x) = (1 + slope) x``.
    """
    if n_hidden < 1:
        return Mlp([dim, dim], np.concatenate([np.eye(dim).ravel(), np.zeros(dim)]), slope)
    eye = np.eye(dim)
    split = np.hstack([eye, -eye])                               # x -> (x, -x)
    merge = np.vstack([eye, -eye]) / (1.0 + slope)               # (a, b) -> (a - b) / (1 + s)
    # (x, -x) -> (x, -x) after undoing the activation on the previous layer
    relay = np.vstack([np.hstack([eye, -eye]), np.hstack([-eye, eye])]) / (1.0 + slope)
    Ws = [split] + [relay] * (n_hidden - 1) + [merge]
    chunks = []
    for W in Ws:
        chunks += [W.ravel(), np.zeros(W.shape[1])]
    dims = [dim] + [2 * dim] * n_hidden + [dim]
    return Mlp(dims, np.concatenate(chunks), slope)


@dataclass
class TrainConfig:
    optimizer: str = "lbfgs"
    max_epochs: int = 3000
    tolerance: float = 1e-9
    seed: int = 0
    lbfgs_memory: int = 20
    adam_lr: float = 1e-3

    def __post_init__(self):
        if self.optimizer not in ("lbfgs", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.max_epochs < 1 or self.tolerance <= 0 or self.lbfgs_memory < 1 or self.adam_lr <= 0:
            raise ValueError("training counts and tolerances must be positive")


@dataclass
class FitResult:
    params: np.ndarray
    history: list = field(default_factory=list)
    result: OptimizeResult | None = None


def optimize(objective, params, cfg: TrainConfig) -> FitResult:
    """Minimise ``objective(params) -> (value, gradient)`` with the configured optimizer."""
    if cfg.optimizer == "lbfgs":
        res = lbfgs(objective, params, max_iter=cfg.max_epochs, gtol=cfg.tolerance,
                    memory=cfg.lbfgs_memory)
    else:
        res = adam(objective, params, lr=cfg.adam_lr, max_iter=cfg.max_epochs, gtol=cfg.tolerance)
    return FitResult(res.x, res.history, res)

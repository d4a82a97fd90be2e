"""Linear (POD), nonlinear (autoencoder) and composed POD+AE reductions."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .neural import Mlp

log = logging.getLogger(__name__)

KINDS = ("POD", "AE", "POD_AE")


@dataclass
class PodBasis:
    """Orthonormal modes (columns) with the full singular spectrum of the snapshots."""

    modes: np.ndarray
    singular_values: np.ndarray
    mean: np.ndarray | None = None

    @property
    def full_dim(self) -> int:
        return self.modes.shape[0]

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]


def _modes_for_energy(s: np.ndarray, energy_tol: float) -> int:
    e = np.cumsum(s**2)
    if e[-1] == 0:
        return 1
    return int(np.searchsorted(e / e[-1], 1.0 - energy_tol) + 1)


def compute_pod(snapshots, n_modes: int | None = None, energy_tol: float | None = None,
                center: bool = False) -> PodBasis:
    """POD basis of a ``full_dim x n_snap`` snapshot matrix via LAPACK SVD.

    Give either ``n_modes`` or ``energy_tol`` (default ``1e-4``); with the
    latter the smallest basis capturing ``1 - energy_tol`` of the squared
    singular-value energy is kept. Mode signs are fixed so that each column's
    largest-magnitude entry is positive.
    """
    X = np.asarray(snapshots, dtype=float)
    if X.ndim != 2:
        raise ValueError("snapshot matrix must be two-dimensional")
    mean = X.mean(axis=1) if center else None
    if center:
        X = X - mean[:, None]
    try:
        U, s, _ = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"SVD did not converge: {exc}") from exc
    if n_modes is None:
        n_modes = _modes_for_energy(s, 1e-4 if energy_tol is None else energy_tol)
    if not 1 <= n_modes <= X.shape[1]:
        raise ValueError(f"n_modes={n_modes} must lie in [1, n_snap={X.shape[1]}]")
    V = U[:, :n_modes].copy()
    flip = V[np.argmax(np.abs(V), axis=0), np.arange(n_modes)] < 0
    V[:, flip] *= -1.0
    return PodBasis(V, s, mean)


def pod_encode(basis: PodBasis, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != basis.full_dim:
        raise ValueError(f"input dimension {x.shape[-1]} != basis dimension {basis.full_dim}")
    if basis.mean is not None:
        x = x - basis.mean
    return x @ basis.modes


def pod_decode(basis: PodBasis, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != basis.n_modes:
        raise ValueError(f"latent dimension {z.shape[-1]} != {basis.n_modes} modes")
    x = z @ basis.modes.T
    return x if basis.mean is None else x + basis.mean


def control_pod_componentwise(controls, modes_per_component, energy_tol=None) -> PodBasis:
    """Separate POD of the x1 and x2 velocity blocks, assembled block-diagonally.

    ``controls`` has shape ``(n_snap, 2, N)``; the returned basis acts on the
    stacked ``2N`` vector ``(u_x, u_y)``.
    """
    C = np.asarray(controls, dtype=float)
    if C.ndim != 3 or C.shape[1] != 2:
        raise ValueError("controls must have shape (n_snap, 2, N)")
    if np.ndim(modes_per_component) == 0:
        modes_per_component = (modes_per_component, modes_per_component)
    N = C.shape[2]
    bx = compute_pod(C[:, 0].T, modes_per_component[0], energy_tol)
    by = compute_pod(C[:, 1].T, modes_per_component[1], energy_tol)
    V = np.zeros((2 * N, bx.n_modes + by.n_modes))
    V[:N, :bx.n_modes] = bx.modes
    V[N:, bx.n_modes:] = by.modes
    s = np.concatenate([bx.singular_values, by.singular_values])
    return PodBasis(V, s)


@dataclass
class Reducer:
    """Encoder/decoder pair of one of the three kinds.

    Networks see min-max normalised inputs: ``x_norm = (x - lo) / scale``
    where ``x`` is the full field (AE) or the POD coefficients (POD_AE); the
    decoder output is mapped back with ``lo + scale * out``.
    """

    kind: str
    latent_dim: int
    pod: PodBasis | None = None
    encoder: Mlp | None = None
    decoder: Mlp | None = None
    lo: np.ndarray | None = None
    scale: np.ndarray | None = None
    trained: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown reducer kind {self.kind!r}")
        nets = self.encoder is not None and self.decoder is not None
        if self.kind == "POD":
            if self.pod is None or self.encoder is not None or self.decoder is not None:
                raise ValueError("a POD reducer holds a basis and no networks")
            self.latent_dim = self.pod.n_modes
            self.trained = True
        elif self.kind == "AE":
            if self.pod is not None or not nets:
                raise ValueError("an AE reducer holds networks and no basis")
        else:
            if self.pod is None or not nets:
                raise ValueError("a POD_AE reducer holds both a basis and networks")
            if self.encoder.n_in != self.pod.n_modes:
                raise ValueError("encoder input width must equal the number of POD modes")
        if nets:
            if self.encoder.n_out != self.latent_dim or self.decoder.n_in != self.latent_dim:
                raise ValueError("network widths disagree with latent_dim")
            if self.decoder.n_out != self.encoder.n_in:
                raise ValueError("decoder output width must match encoder input width")
            if self.lo is None:
                self.lo = np.zeros(self.encoder.n_in)
            if self.scale is None:
                self.scale = np.ones(self.encoder.n_in)

    @property
    def uses_networks(self) -> bool:
        return self.kind != "POD"

    def network_input(self, x) -> np.ndarray:
        """Normalised input of the encoder network for full-order data ``x``."""
        base = pod_encode(self.pod, x) if self.kind == "POD_AE" else np.asarray(x, dtype=float)
        return (base - self.lo) / self.scale

    def _require_trained(self):
        if not self.trained:
            raise RuntimeError(f"{self.kind} reducer used before its networks were trained")


def minmax_normalization(data, per_feature: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``(lo, scale)`` mapping ``data`` into [0, 1]; constant features get scale 1.

    With ``per_feature=False`` one global range is shared by all features,
    which keeps their relative magnitudes.
    """
    data = np.asarray(data, dtype=float)
    if per_feature:
        lo = data.min(axis=0)
        span = data.max(axis=0) - lo
    else:
        lo = np.full(data.shape[1], data.min())
        span = np.full(data.shape[1], data.max() - data.min())
    return lo, np.where(span > 0, span, 1.0)


def encode(reducer: Reducer, x) -> np.ndarray:
    """Full-order field(s) to latent coordinates."""
    if reducer.kind == "POD":
        return pod_encode(reducer.pod, x)
    reducer._require_trained()
    return reducer.encoder(reducer.network_input(x))


def decode(reducer: Reducer, z) -> np.ndarray:
    """Latent coordinates back to full-order field(s)."""
    if reducer.kind == "POD":
        return pod_decode(reducer.pod, z)
    reducer._require_trained()
    out = reducer.lo + reducer.scale * reducer.decoder(z)
    return out if reducer.kind == "AE" else pod_decode(reducer.pod, out)


def relative_error(truth, approx) -> float:
    """Mean over samples (rows) of ``||x - x~|| / ||x||``; zero-norm rows are skipped."""
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    approx = np.atleast_2d(np.asarray(approx, dtype=float))
    if truth.shape != approx.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {approx.shape}")
    tn = np.linalg.norm(truth, axis=1)
    ok = tn > 0
    if not ok.all():
        log.warning("excluding %d zero-norm samples from the relative error", int((~ok).sum()))
    if not ok.any():
        return float("nan")
    return float(np.mean(np.linalg.norm(truth[ok] - approx[ok], axis=1) / tn[ok]))

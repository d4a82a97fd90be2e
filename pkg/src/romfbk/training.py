"""Joint training of the reducers, the latent policy and the latent forward model.

All trainable networks are packed into one parameter vector and optimised
against a single composite loss::

    J = l1 * J_rec_y + l2 * J_rec_u + J_policy (+ J_forward)

POD bases are computed once from the training split and stay frozen.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .neural import Mlp, TrainConfig, init_he, optimize
from .ocp import SnapshotSet
from .reduction import (Reducer, compute_pod, control_pod_componentwise, decode, encode,
                        minmax_normalization, relative_error)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    l1: float = 0.01    # state reconstruction
    l2: float = 0.01    # control reconstruction
    l3: float = 0.01    # policy error after decoding
    l4: float = 1.0     # forward prediction from data
    l5: float = 1.0     # forward prediction from policy
    l6: float = 0.001   # forward prediction after decoding

    def __post_init__(self):
        if min(self.l1, self.l2, self.l3, self.l4, self.l5, self.l6) < 0:
            raise ValueError("loss weights must be non-negative")


STAGE1_WEIGHTS = LossWeights(0.01, 0.01, 0.01, 0.0, 0.0, 0.0)
STAGE2_WEIGHTS = LossWeights(0.001, 0.001, 0.001, 1.0, 1.0, 0.001)


@dataclass(frozen=True)
class Architecture:
    state_kind: str = "POD_AE"
    control_kind: str = "POD_AE"
    state_modes: int = 60
    control_modes: int = 40          # per velocity component
    latent_state: int = 10
    latent_control: int = 18
    state_encoder: tuple = (100,)
    state_decoder: tuple = (100, 100)
    control_encoder: tuple = (100,)
    control_decoder: tuple = (200, 200)
    policy: tuple = (50, 50, 50)
    forward: tuple = (50, 50, 50)
    feature_map: str = "none"
    state_scaling: str = "global"      # "global" or "feature" min-max
    control_scaling: str = "global"

    def __post_init__(self):
        for s in (self.state_scaling, self.control_scaling):
            if s not in ("global", "feature"):
                raise ValueError(f"unknown scaling {s!r}")


def _flow_features(mu):
    """Extra policy inputs for background-flow scenarios (mu2, gamma, alpha at columns 1..3)."""
    mu = np.atleast_2d(mu)
    g, a = mu[:, 2], mu[:, 3]
    return np.column_stack([np.tan(mu[:, 1]), np.tan(a), g * np.sin(a), g * np.cos(a)])


FEATURE_MAPS = {"none": None, "flow_trig": _flow_features}


@dataclass
class ControllerModel:
    state_reducer: Reducer
    control_reducer: Reducer
    policy: Mlp
    forward_model: Mlp | None
    mu_lo: np.ndarray
    mu_scale: np.ndarray
    feature_map: str = "none"
    meta: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)

    @property
    def latent_state(self) -> int:
        return self.state_reducer.latent_dim

    @property
    def latent_control(self) -> int:
        return self.control_reducer.latent_dim

    def features(self, mu) -> np.ndarray:
        """Network inputs describing the scenario: box-normalised ``mu`` plus optional extras."""
        mu = np.atleast_2d(np.asarray(mu, dtype=float))
        f = (mu - self.mu_lo) / self.mu_scale
        extra = FEATURE_MAPS[self.feature_map]
        return f if extra is None else np.hstack([f, extra(mu)])

    def policy_latent(self, yN, mu) -> np.ndarray:
        yN = np.atleast_2d(yN)
        return self.policy(np.hstack([yN, self.features(mu)]))

    def forward_latent(self, yN, uN, mu) -> np.ndarray:
        if self.forward_model is None:
            raise RuntimeError("forward model absent")
        return self.forward_model(np.hstack([np.atleast_2d(yN), np.atleast_2d(uN), self.features(mu)]))


# ---------------------------------------------------------------------------- data

@dataclass
class _Batch:
    """Training arrays for one split, flattened to rows."""

    states: np.ndarray     # (n*(Nt+1), N)
    controls: np.ndarray   # (n*Nt, 2N)
    feats: np.ndarray      # (n*Nt, p) per triplet row
    trip_state: np.ndarray  # state row of each triplet
    pair_prev: np.ndarray   # state row at t_{j-1}
    pair_next: np.ndarray   # state row at t_j
    pair_ctrl: np.ndarray   # control / triplet row at t_{j-1}


def _batch(ds: SnapshotSet, idx, model: ControllerModel) -> _Batch:
    idx = np.asarray(idx)
    n, Nt = len(idx), ds.Nt
    S = ds.states[idx].reshape(n * (Nt + 1), -1)
    C = ds.controls[idx].reshape(n * Nt, -1)
    feats = np.repeat(model.features(ds.mu[idx]), Nt, axis=0)
    i = np.repeat(np.arange(n), Nt)
    j = np.tile(np.arange(Nt), n)
    trip = i * (Nt + 1) + j
    return _Batch(S, C, feats, trip, trip, trip + 1, i * Nt + j)


def _stage_inputs(reducer: Reducer, X):
    """(base-space targets, network inputs or fixed latent) for a reducer."""
    if reducer.kind == "POD":
        return None, encode(reducer, X)
    base = X if reducer.kind == "AE" else X @ reducer.pod.modes
    return base, (base - reducer.lo) / reducer.scale


# ---------------------------------------------------------------------------- loss

class JointObjective:
    """Composite loss and gradient over the flat vector of all trainable networks."""

    def __init__(self, model: ControllerModel, batch: _Batch, weights: LossWeights,
                 with_forward: bool):
        self.model = model
        self.batch = batch
        self.w = weights
        self.with_forward = with_forward and model.forward_model is not None
        sr, cr = model.state_reducer, model.control_reducer
        self.nets: dict[str, Mlp] = {}
        if sr.uses_networks:
            self.nets["Ey"], self.nets["Dy"] = sr.encoder, sr.decoder
        if cr.uses_networks:
            self.nets["Eu"], self.nets["Du"] = cr.encoder, cr.decoder
        self.nets["P"] = model.policy
        if self.with_forward:
            self.nets["F"] = model.forward_model
        self.slices, o = {}, 0
        for k, net in self.nets.items():
            self.slices[k] = slice(o, o + net.n_params)
            o += net.n_params
        self.n_params = o
        self.base_y, self.in_y = _stage_inputs(sr, batch.states)
        self.base_u, self.in_u = _stage_inputs(cr, batch.controls)

    def pack(self) -> np.ndarray:
        return np.concatenate([net.params for net in self.nets.values()])

    def unpack_into_model(self, theta):
        for k, net in self.nets.items():
            net.params = theta[self.slices[k]].copy()

    def parts(self, theta) -> dict:
        return self._run(theta, need_grad=False)[0]

    def __call__(self, theta):
        parts, grad = self._run(theta, need_grad=True)
        return parts["total"], grad

    def _run(self, theta, need_grad):
        b, w, m = self.batch, self.w, self.model
        P = {k: theta[s] for k, s in self.slices.items()}
        sr, cr = m.state_reducer, m.control_reducer
        ae_y, ae_u = sr.uses_networks, cr.uses_networks
        Ny = m.latent_state
        Nu = m.latent_control
        parts = {}

        # state reduction
        if ae_y:
            yN, cEy = self.nets["Ey"].forward(self.in_y, P["Ey"])
            ry, cDy = self.nets["Dy"].forward(yN, P["Dy"])
            err_y = sr.lo + sr.scale * ry - self.base_y
            parts["rec_y"] = float(np.mean(np.sum(err_y**2, axis=1)))
        else:
            yN = self.in_y
            parts["rec_y"] = 0.0
        # control reduction
        if ae_u:
            uN, cEu = self.nets["Eu"].forward(self.in_u, P["Eu"])
            ru, cDu = self.nets["Du"].forward(uN, P["Du"])
            rec_u = cr.lo + cr.scale * ru
            err_u = rec_u - self.base_u
            parts["rec_u"] = float(np.mean(np.sum(err_u**2, axis=1)))
        else:
            uN = self.in_u
            parts["rec_u"] = 0.0
        # policy
        pin = np.hstack([yN[b.trip_state], b.feats])
        uhat, cP = self.nets["P"].forward(pin, P["P"])
        d_lat = uN - uhat
        parts["policy_latent"] = float(np.mean(np.sum(d_lat**2, axis=1)))
        use_pd = ae_u and w.l3 > 0
        if use_pd:
            rh, cDu2 = self.nets["Du"].forward(uhat, P["Du"])
            d_dec = rec_u - (cr.lo + cr.scale * rh)
            parts["policy_decoded"] = float(np.mean(np.sum(d_dec**2, axis=1)))
        else:
            parts["policy_decoded"] = 0.0
        # forward model
        fw = self.with_forward
        if fw:
            fin1 = np.hstack([yN[b.pair_prev], uN[b.pair_ctrl], b.feats[b.pair_ctrl]])
            fin2 = np.hstack([yN[b.pair_prev], uhat[b.pair_ctrl], b.feats[b.pair_ctrl]])
            ytil, cF1 = self.nets["F"].forward(fin1, P["F"])
            yhat, cF2 = self.nets["F"].forward(fin2, P["F"])
            e1 = yN[b.pair_next] - ytil
            e2 = yN[b.pair_next] - yhat
            parts["fwd_data"] = float(np.mean(np.sum(e1**2, axis=1)))
            parts["fwd_policy"] = float(np.mean(np.sum(e2**2, axis=1)))
            use_fd = ae_y and w.l6 > 0
            if use_fd:
                rt, cDy2 = self.nets["Dy"].forward(ytil, P["Dy"])
                e3 = (sr.lo + sr.scale * ry[b.pair_next]) - (sr.lo + sr.scale * rt)
                parts["fwd_decoded"] = float(np.mean(np.sum(e3**2, axis=1)))
            else:
                parts["fwd_decoded"] = 0.0
        else:
            parts["fwd_data"] = parts["fwd_policy"] = parts["fwd_decoded"] = 0.0

        parts["J_rec"] = w.l1 * parts["rec_y"] + w.l2 * parts["rec_u"]
        parts["J_policy"] = parts["policy_latent"] + w.l3 * parts["policy_decoded"]
        parts["J_forward"] = (w.l4 * parts["fwd_data"] + w.l5 * parts["fwd_policy"]
                              + w.l6 * parts["fwd_decoded"])
        parts["total"] = parts["J_rec"] + parts["J_policy"] + parts["J_forward"]
        if not need_grad:
            return parts, None

        grad = np.zeros(self.n_params)
        gyN = np.zeros_like(yN) if ae_y else None
        guN = np.zeros_like(uN) if ae_u else None
        guhat = np.zeros_like(uhat)
        n_t = pin.shape[0]

        def acc(key, g):
            grad[self.slices[key]] += g

        d_ry = None
        if ae_y:
            d_ry = (2.0 * w.l1 / err_y.shape[0]) * err_y
        if fw:
            n_p = e1.shape[0]
            d_ytil = -(2.0 * w.l4 / n_p) * e1
            d_yhat = -(2.0 * w.l5 / n_p) * e2
            if ae_y:
                gyN[b.pair_next] += (2.0 * w.l4 / n_p) * e1 + (2.0 * w.l5 / n_p) * e2
            if ae_y and w.l6 > 0:
                g3 = (2.0 * w.l6 / n_p) * e3
                d_ry[b.pair_next] += g3
                gp, gin = self.nets["Dy"].backward(cDy2, -g3 * sr.scale)
                acc("Dy", gp)
                d_ytil += gin
            gp1, gin1 = self.nets["F"].backward(cF1, d_ytil)
            gp2, gin2 = self.nets["F"].backward(cF2, d_yhat)
            acc("F", gp1)
            acc("F", gp2)
            if ae_y:
                gyN[b.pair_prev] += gin1[:, :Ny] + gin2[:, :Ny]
            if ae_u:
                guN[b.pair_ctrl] += gin1[:, Ny:Ny + Nu]
            guhat[b.pair_ctrl] += gin2[:, Ny:Ny + Nu]

        guhat -= (2.0 / n_t) * d_lat
        if ae_u:
            guN += (2.0 / n_t) * d_lat
            d_ru = (2.0 * w.l2 / err_u.shape[0]) * err_u
            if use_pd:
                gpd = (2.0 * w.l3 / n_t) * d_dec
                d_ru = d_ru + gpd
                gp, gin = self.nets["Du"].backward(cDu2, -gpd * cr.scale)
                acc("Du", gp)
                guhat += gin
        gp, gin = self.nets["P"].backward(cP, guhat)
        acc("P", gp)
        if ae_y:
            gyN[b.trip_state] += gin[:, :Ny]
            gp, gin = self.nets["Dy"].backward(cDy, d_ry * sr.scale)
            acc("Dy", gp)
            gyN += gin
            acc("Ey", self.nets["Ey"].backward(cEy, gyN)[0])
        if ae_u:
            gp, gin = self.nets["Du"].backward(cDu, d_ru * cr.scale)
            acc("Du", gp)
            guN += gin
            acc("Eu", self.nets["Eu"].backward(cEu, guN)[0])
        return parts, grad


def loss_reconstruction(model: ControllerModel, ds: SnapshotSet, which="train",
                        weights: LossWeights = STAGE1_WEIGHTS) -> float:
    """``l1 * J_rec_y + l2 * J_rec_u`` (zero for POD reducers)."""
    obj = JointObjective(model, _batch(ds, _split(ds, which), model), weights, False)
    return obj.parts(obj.pack())["J_rec"]


def loss_policy(model: ControllerModel, ds: SnapshotSet, which="train",
                weights: LossWeights = STAGE1_WEIGHTS) -> float:
    """Latent policy error plus ``l3`` times the error after decoding."""
    obj = JointObjective(model, _batch(ds, _split(ds, which), model), weights, False)
    return obj.parts(obj.pack())["J_policy"]


def loss_forward(model: ControllerModel, ds: SnapshotSet, which="train",
                 weights: LossWeights = STAGE2_WEIGHTS) -> float:
    """Weighted one-step forward-model errors (from data, from policy, after decoding)."""
    if ds.Nt < 1:
        raise ValueError("trajectories need at least two states")
    obj = JointObjective(model, _batch(ds, _split(ds, which), model), weights, True)
    return obj.parts(obj.pack())["J_forward"]


def _split(ds: SnapshotSet, which):
    if isinstance(which, str):
        return {"train": ds.train, "test": ds.test, "all": np.arange(ds.n_traj)}[which]
    return np.asarray(which)


# ---------------------------------------------------------------------------- setup

def _hidden(widths) -> list:
    return [int(x) for x in widths]


def build_model(ds: SnapshotSet, arch: Architecture = Architecture(), seed: int = 0,
                with_forward: bool = False, mu_box=None) -> ControllerModel:
    """Fit the POD bases and normalisations on the training split and He-initialise all networks."""
    train = ds.train
    S = ds.states[train].reshape(-1, ds.states.shape[-1])
    C = ds.controls[train].reshape(-1, 2, ds.controls.shape[-1])
    ss = np.random.SeedSequence(seed).spawn(6)

    def make(kind, X, modes_fn, latent, enc, dec, s_enc, s_dec, scaling):
        pod = modes_fn() if kind in ("POD", "POD_AE") else None
        if kind == "POD":
            return Reducer("POD", pod.n_modes, pod=pod)
        base = X if kind == "AE" else X @ pod.modes
        lo, scale = minmax_normalization(base, per_feature=scaling == "feature")
        d = base.shape[1]
        return Reducer(kind, latent, pod=pod,
                       encoder=init_he([d, *_hidden(enc), latent], s_enc),
                       decoder=init_he([latent, *_hidden(dec), d], s_dec), lo=lo, scale=scale)

    sr = make(arch.state_kind, S, lambda: compute_pod(S.T, arch.state_modes), arch.latent_state,
              arch.state_encoder, arch.state_decoder, ss[0], ss[1], arch.state_scaling)
    Cf = C.reshape(C.shape[0], -1)
    cr = make(arch.control_kind, Cf, lambda: control_pod_componentwise(C, arch.control_modes),
              arch.latent_control, arch.control_encoder, arch.control_decoder, ss[2], ss[3], arch.control_scaling)
    if mu_box is None:
        mu_box = ds.meta.get("target_box")
    if mu_box is None:
        mu_lo, mu_scale = minmax_normalization(ds.mu[train])
    else:
        box = np.asarray(mu_box, dtype=float)
        mu_lo, mu_scale = box[:, 0], box[:, 1] - box[:, 0]
    model = ControllerModel(sr, cr, None, None, mu_lo, mu_scale, arch.feature_map,
                            meta={"nx": ds.nx, "Nt": ds.Nt, "dt": ds.dt,
                                  "mu_box": np.column_stack([mu_lo, mu_lo + mu_scale]).tolist(),
                                  "architecture": arch.__dict__.copy()})
    p = model.features(ds.mu[:1]).shape[1]
    Ny, Nu = sr.latent_dim, cr.latent_dim
    model.policy = init_he([Ny + p, *_hidden(arch.policy), Nu], ss[4])
    if with_forward:
        model.forward_model = init_he([Ny + Nu + p, *_hidden(arch.forward), Ny], ss[5])
    return model


# ---------------------------------------------------------------------------- training

def _fit(model, ds, weights, cfg, with_forward):
    batch = _batch(ds, ds.train, model)
    obj = JointObjective(model, batch, weights, with_forward)
    theta0 = obj.pack()
    t0 = time.perf_counter()
    fit = optimize(obj, theta0, cfg)
    elapsed = time.perf_counter() - t0
    obj.unpack_into_model(fit.params)
    for r in (model.state_reducer, model.control_reducer):
        r.trained = True
    res = fit.result
    return {"loss": [float(v) for v in fit.history], "parts": obj.parts(fit.params),
            "iterations": int(res.n_iter) if res else 0,
            "warning": res.warning if res else None, "t_train": elapsed}


def train_controller(ds: SnapshotSet, weights: LossWeights | None = None,
                     cfg: TrainConfig = TrainConfig(), with_forward: bool = False,
                     arch: Architecture = Architecture(), warm_start: ControllerModel | None = None,
                     cold_start: bool = False, stage1_weights: LossWeights = STAGE1_WEIGHTS
                     ) -> ControllerModel:
    """Train reducers and policy (stage 1), optionally followed by the forward model (stage 2).

    With ``with_forward`` the autoencoders and policy start from ``warm_start``
    or, if none is given, from a stage-1 run performed here first.
    ``cold_start=True`` skips that and He-initialises everything.
    """
    if len(ds.test) == ds.n_traj:
        raise ValueError("dataset has no training trajectories")
    if not with_forward:
        model = build_model(ds, arch, cfg.seed)
        model.history["stage1"] = _fit(model, ds, weights or STAGE1_WEIGHTS, cfg, False)
        return model
    if cold_start:
        model = build_model(ds, arch, cfg.seed, with_forward=True)
    else:
        base = warm_start
        if base is None:
            base = train_controller(ds, stage1_weights, cfg, False, arch)
        model = copy_model(base)
        fresh = build_model(ds, arch, cfg.seed, with_forward=True)
        model.forward_model = fresh.forward_model
    model.history["stage2"] = _fit(model, ds, weights or STAGE2_WEIGHTS, cfg, True)
    return model


def copy_model(m: ControllerModel) -> ControllerModel:
    def cp(r: Reducer):
        return replace(r, encoder=r.encoder.copy() if r.encoder else None,
                       decoder=r.decoder.copy() if r.decoder else None)

    return ControllerModel(cp(m.state_reducer), cp(m.control_reducer), m.policy.copy(),
                           m.forward_model.copy() if m.forward_model else None,
                           m.mu_lo.copy(), m.mu_scale.copy(), m.feature_map, dict(m.meta),
                           dict(m.history))


# ---------------------------------------------------------------------------- evaluation

def evaluate_model(model: ControllerModel, ds: SnapshotSet, which="test") -> dict:
    """Mean relative errors on a split (test by default).

    Keys: ``state_rec``, ``control_rec``, ``policy_latent``, ``policy_decoded``
    and, when a forward model is present, ``fwd_data_latent``,
    ``fwd_data_decoded``, ``fwd_policy_latent``, ``fwd_policy_decoded``.
    """
    idx = _split(ds, which)
    if len(idx) == 0:
        raise ValueError(f"split {which!r} is empty")
    n, Nt = len(idx), ds.Nt
    S = ds.states[idx]
    y, mu, u, _ = ds.triplets("all")
    tri = np.isin(np.repeat(np.arange(ds.n_traj), Nt), idx)
    y, mu, u = y[tri], mu[tri], u[tri]
    sr, cr = model.state_reducer, model.control_reducer
    all_states = S.reshape(n * (Nt + 1), -1)
    rep = {
        "state_rec": relative_error(all_states, decode(sr, encode(sr, all_states))),
        "control_rec": relative_error(u, decode(cr, encode(cr, u))),
    }
    yN = encode(sr, y)
    uN = encode(cr, u)
    uhat = model.policy_latent(yN, mu)
    rep["policy_latent"] = relative_error(uN, uhat)
    rep["policy_decoded"] = relative_error(u, decode(cr, uhat))
    if model.forward_model is not None:
        yN_all = encode(sr, all_states).reshape(n, Nt + 1, -1)
        prev = yN_all[:, :-1].reshape(n * Nt, -1)
        nxt = yN_all[:, 1:].reshape(n * Nt, -1)
        nxt_full = S[:, 1:].reshape(n * Nt, -1)
        ytil = model.forward_latent(prev, uN, mu)
        yhat = model.forward_latent(prev, uhat, mu)
        rep["fwd_data_latent"] = relative_error(nxt, ytil)
        rep["fwd_data_decoded"] = relative_error(nxt_full, decode(sr, ytil))
        rep["fwd_policy_latent"] = relative_error(nxt, yhat)
        rep["fwd_policy_decoded"] = relative_error(nxt_full, decode(sr, yhat))
    return rep

"""Binary artifact files and CSV export.

Layout of an artifact::

    b"ROMFBK01"                      8-byte magic
    uint64 little-endian             header length in bytes
    UTF-8 JSON header                {"format_version", "kind", "meta", "arrays", "timing"}
    payload                          little-endian float64 arrays, concatenated in header order

``arrays`` lists ``{"name", "shape", "dtype"}``; ``dtype`` records the
in-memory type (``"f8"`` or ``"i8"``) while the payload is always float64.
Wall-clock quantities live under ``timing`` only, so two runs with the same
inputs produce identical ``meta`` and payload bytes.
"""
from __future__ import annotations

import json
import os
import struct
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .controller import LoopReport
from .neural import Mlp
from .ocp import SnapshotSet
from .reduction import PodBasis, Reducer
from .training import ControllerModel

MAGIC = b"ROMFBK01"
FORMAT_VERSION = 1
ARTIFACT_KINDS = ("dataset", "pod_basis", "model", "report")
_MAX_INT_IN_F8 = 2**53


class ArtifactError(ValueError):
    """Malformed, truncated or incompatible artifact file."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@contextmanager
def atomic_path(path):
    """Yield a temporary sibling path that replaces ``path`` only on success."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.part{os.getpid()}")
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def encode_artifact(kind: str, meta: dict, arrays: dict, timing: dict | None = None) -> bytes:
    if kind not in ARTIFACT_KINDS:
        raise ArtifactError(f"unknown artifact kind {kind!r}")
    decl, chunks = [], []
    for name, a in arrays.items():
        a = np.asarray(a)
        if a.dtype.kind in "iub":
            if a.size and np.abs(a).max() >= _MAX_INT_IN_F8:
                raise ArtifactError(f"integer array {name!r} not representable in float64")
            dtype = "i8"
        elif a.dtype.kind == "f":
            dtype = "f8"
        else:
            raise ArtifactError(f"array {name!r} has unsupported dtype {a.dtype}")
        decl.append({"name": name, "shape": list(a.shape), "dtype": dtype})
        chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    header = {"format_version": FORMAT_VERSION, "kind": kind, "meta": _jsonable(meta),
              "arrays": decl, "timing": _jsonable(timing or {})}
    hb = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(chunks)


def decode_artifact(data: bytes, expect_kind: str | None = None):
    """Parse artifact bytes into ``(kind, meta, arrays, timing)``."""
    if len(data) < 16 or data[:8] != MAGIC:
        raise ArtifactError("bad magic: not a ROMFBK01 artifact")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise ArtifactError("truncated header")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"corrupt header: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ArtifactError(f"unsupported format version {version!r}")
    kind = header.get("kind")
    if kind not in ARTIFACT_KINDS:
        raise ArtifactError(f"unknown artifact kind {kind!r}")
    if expect_kind is not None and kind != expect_kind:
        raise ArtifactError(f"expected a {expect_kind} artifact, found {kind}")
    payload = memoryview(data)[16 + hlen:]
    sizes = [int(np.prod(d["shape"], dtype=np.int64)) for d in header["arrays"]]
    if 8 * sum(sizes) != len(payload):
        raise ArtifactError(f"shape mismatch: header declares {sum(sizes)} floats, "
                            f"payload holds {len(payload) / 8:g}")
    arrays, o = {}, 0
    for d, n in zip(header["arrays"], sizes):
        a = np.frombuffer(payload[o:o + 8 * n], dtype="<f8").astype(np.float64).reshape(d["shape"])
        o += 8 * n
        arrays[d["name"]] = a.astype(np.int64) if d.get("dtype") == "i8" else a
    return kind, header["meta"], arrays, header.get("timing", {})


def write_artifact(path, kind: str, meta: dict, arrays: dict, timing: dict | None = None):
    data = encode_artifact(kind, meta, arrays, timing)
    with atomic_path(path) as tmp:
        Path(tmp).write_bytes(data)


def read_artifact(path, expect_kind: str | None = None):
    return decode_artifact(Path(path).read_bytes(), expect_kind)


# ---------------------------------------------------------------------------- typed save/load

def _split_timing(d: dict):
    """Move wall-clock entries (keys starting with ``t_`` or ``time``) out of a metadata dict."""
    meta = {k: v for k, v in d.items() if not (k.startswith("t_") or k.startswith("time"))}
    return meta, {k: v for k, v in d.items() if k not in meta}


def save_dataset(ds: SnapshotSet, path):
    meta, timing = _split_timing(ds.meta)
    write_artifact(path, "dataset", {"nx": ds.nx, "dt": ds.dt, "Nt": ds.Nt, "info": meta},
                   {"states": ds.states, "controls": ds.controls, "mu": ds.mu,
                    "initial_centers": ds.initial_centers, "costs": ds.costs,
                    "test": ds.test.astype(np.int64), "source": ds.source.astype(np.int64)},
                   timing)


def load_dataset(path) -> SnapshotSet:
    _, meta, a, timing = read_artifact(path, "dataset")
    ds = SnapshotSet(int(meta["nx"]), float(meta["dt"]), a["states"], a["controls"], a["mu"],
                     a["initial_centers"], a["costs"], a["test"], a["source"],
                     {**meta["info"], **timing})
    if ds.states.shape[1] != ds.Nt + 1 or ds.states.shape[2] != ds.nx**2:
        raise ArtifactError("dataset arrays disagree with the declared grid")
    return ds


def _reducer_parts(r: Reducer, prefix: str):
    meta = {"kind": r.kind, "latent_dim": r.latent_dim, "trained": r.trained,
            "info": _jsonable(r.meta)}
    arrays = {}
    if r.pod is not None:
        arrays[prefix + "pod.modes"] = r.pod.modes
        arrays[prefix + "pod.singular_values"] = r.pod.singular_values
        if r.pod.mean is not None:
            arrays[prefix + "pod.mean"] = r.pod.mean
    for name in ("encoder", "decoder"):
        net = getattr(r, name)
        if net is not None:
            meta[name] = {"layer_dims": net.layer_dims, "slope": net.slope}
            arrays[prefix + name] = net.params
    if r.uses_networks:
        arrays[prefix + "lo"] = r.lo
        arrays[prefix + "scale"] = r.scale
    return meta, arrays


def _reducer_from(meta: dict, a: dict, prefix: str) -> Reducer:
    pod = None
    if prefix + "pod.modes" in a:
        pod = PodBasis(a[prefix + "pod.modes"], a[prefix + "pod.singular_values"],
                       a.get(prefix + "pod.mean"))
    nets = {}
    for name in ("encoder", "decoder"):
        if name in meta:
            nets[name] = Mlp(meta[name]["layer_dims"], a[prefix + name], meta[name]["slope"])
    return Reducer(meta["kind"], int(meta["latent_dim"]), pod, nets.get("encoder"),
                   nets.get("decoder"), a.get(prefix + "lo"), a.get(prefix + "scale"),
                   bool(meta["trained"]), meta.get("info", {}))


def save_reducer(r: Reducer, path):
    """Stand-alone reducer file (artifact kind ``pod_basis``; networks included when present)."""
    meta, arrays = _reducer_parts(r, "")
    write_artifact(path, "pod_basis", meta, arrays)


def load_reducer(path) -> Reducer:
    _, meta, a, _ = read_artifact(path, "pod_basis")
    return _reducer_from(meta, a, "")


def model_to_artifact(m: ControllerModel):
    ms, as_ = _reducer_parts(m.state_reducer, "state.")
    mc, ac = _reducer_parts(m.control_reducer, "control.")
    hist_meta, timing = {}, {}
    for stage, h in m.history.items():
        hm, ht = _split_timing(h)
        hist_meta[stage] = hm
        if ht:
            timing[stage] = ht
    meta = {"state": ms, "control": mc, "feature_map": m.feature_map,
            "policy": {"layer_dims": m.policy.layer_dims, "slope": m.policy.slope},
            "forward": None if m.forward_model is None else
            {"layer_dims": m.forward_model.layer_dims, "slope": m.forward_model.slope},
            "info": _jsonable(m.meta), "history": _jsonable(hist_meta)}
    arrays = {**as_, **ac, "policy": m.policy.params, "mu_lo": m.mu_lo, "mu_scale": m.mu_scale}
    if m.forward_model is not None:
        arrays["forward"] = m.forward_model.params
    return meta, arrays, timing


def save_model(m: ControllerModel, path):
    meta, arrays, timing = model_to_artifact(m)
    write_artifact(path, "model", meta, arrays, timing)


def load_model(path) -> ControllerModel:
    _, meta, a, timing = read_artifact(path, "model")
    sr = _reducer_from(meta["state"], a, "state.")
    cr = _reducer_from(meta["control"], a, "control.")
    pol = Mlp(meta["policy"]["layer_dims"], a["policy"], meta["policy"]["slope"])
    fwd = None
    if meta["forward"] is not None:
        fwd = Mlp(meta["forward"]["layer_dims"], a["forward"], meta["forward"]["slope"])
    p = a["mu_lo"].size + (0 if meta["feature_map"] == "none" else 4)
    if pol.n_in != sr.latent_dim + p or pol.n_out != cr.latent_dim:
        raise ArtifactError("policy widths disagree with the reducers")
    if fwd is not None and (fwd.n_in != sr.latent_dim + cr.latent_dim + p
                            or fwd.n_out != sr.latent_dim):
        raise ArtifactError("forward-model widths disagree with the reducers")
    hist = {k: {**v, **timing.get(k, {})} for k, v in meta["history"].items()}
    return ControllerModel(sr, cr, pol, fwd, a["mu_lo"], a["mu_scale"], meta["feature_map"],
                           meta["info"], hist)


def save_report(r: LoopReport, path):
    arrays = {"mu": r.mu, "controls": r.controls, "distances": r.distances}
    if r.states is not None:
        arrays["states"] = r.states
    if r.latent_states is not None:
        arrays["latent_states"] = r.latent_states
    write_artifact(path, "report", {"mode": r.mode, "aborted": r.aborted, "info": r.meta},
                   arrays, {"t_inference": r.t_inference, "t_plant": r.t_plant})


def load_report(path) -> LoopReport:
    _, meta, a, timing = read_artifact(path, "report")
    return LoopReport(meta["mode"], a["mu"], a["controls"], a["distances"], a.get("states"),
                      a.get("latent_states"), float(timing.get("t_inference", 0.0)),
                      float(timing.get("t_plant", 0.0)), meta["aborted"], meta["info"])


# ---------------------------------------------------------------------------- CSV

def _fmt(x) -> str:
    return format(float(x), ".17g")


def export_csv(artifact_path, csv_path):
    """Flatten any artifact to ``name,index,value`` rows (floats at 17 significant digits).

    Header metadata is written as ``# key = json`` comment lines first.
    """
    kind, meta, arrays, timing = read_artifact(artifact_path)
    with atomic_path(csv_path) as tmp, open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write(f"# kind = {kind}\n")
        for k, v in sorted(meta.items()):
            f.write(f"# {k} = {json.dumps(v, sort_keys=True)}\n")
        for k, v in sorted(timing.items()):
            f.write(f"# timing.{k} = {json.dumps(v, sort_keys=True)}\n")
        f.write("name,index,value\n")
        for name, a in arrays.items():
            for idx in np.ndindex(a.shape):
                f.write(f"{name},{';'.join(map(str, idx))},{_fmt(a[idx])}\n")


def read_csv_arrays(csv_path) -> dict:
    """Inverse of the array part of :func:`export_csv` (float arrays)."""
    rows: dict[str, list] = {}
    with open(csv_path, encoding="utf-8") as f:
        for line in f:
            if line.startswith("#") or line.startswith("name,"):
                continue
            name, idx, val = line.rstrip("\n").split(",")
            rows.setdefault(name, []).append((tuple(int(i) for i in idx.split(";") if i), float(val)))
    out = {}
    for name, items in rows.items():
        shape = tuple(max(ix[d] for ix, _ in items) + 1 for d in range(len(items[0][0])))
        a = np.empty(shape)
        for ix, v in items:
            a[ix] = v
        out[name] = a
    return out


def write_table_csv(path, columns: list, rows):
    """Plain table CSV with 17-significant-digit floats."""
    with atomic_path(path) as tmp, open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(columns) + "\n")
        for r in rows:
            f.write(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v)
                             for v in r) + "\n")

"""Byte-deterministic model files.

Layout: 8-byte magic ``DEEPESM1``, an 8-byte little-endian header length,
a JSON header (sorted keys) describing the stored arrays and metadata, then
the raw little-endian float64 array payloads back to back.  Identical
models serialize to identical bytes, and a round trip reproduces every
parameter bit-exactly.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .estimators import EsModel
from .nn import Mlp
from .noncrossing import NcEsModel, NcStack

__all__ = ["save_model", "load_model"]

_MAGIC = b"DEEPESM1"


def _pack(kind, meta, arrays):
    order = sorted(arrays)
    blobs, entries = [], []
    offset = 0
    for name in order:
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        blob = arr.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": "deepes-model",
        "version": 1,
        "kind": kind,
        "meta": meta,
        "arrays": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _MAGIC + len(head).to_bytes(8, "little") + head + b"".join(blobs)


def _unpack(buf):
    if buf[:8] != _MAGIC:
        raise ValueError("not a deepes model file")
    hlen = int.from_bytes(buf[8:16], "little")
    header = json.loads(buf[16:16 + hlen].decode())
    payload = buf[16 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).copy()
    return header["kind"], header["meta"], arrays


def _tau_json(t):
    return "inf" if math.isinf(t) else float(t)


def _tau_from_json(t):
    return math.inf if t == "inf" else float(t)


def _mlp_meta(net, prefix, meta, arrays):
    meta[prefix + "widths"] = list(net.layer_widths)
    meta[prefix + "trunc"] = net.truncation_bound
    arrays[prefix + "params"] = net.params


def _mlp_from(prefix, meta, arrays):
    return Mlp(
        tuple(meta[prefix + "widths"]),
        arrays[prefix + "params"],
        truncation_bound=meta[prefix + "trunc"],
    )


def _stack_meta(stack, prefix, meta, arrays):
    meta[prefix + "levels"] = list(stack.levels)
    meta[prefix + "kind"] = stack.kind
    _mlp_meta(stack.mean_net, prefix + "mean.", meta, arrays)
    for j, g in enumerate(stack.gap_nets):
        _mlp_meta(g, f"{prefix}gap{j}.", meta, arrays)


def _stack_from(prefix, meta, arrays):
    levels = tuple(meta[prefix + "levels"])
    gaps = tuple(
        _mlp_from(f"{prefix}gap{j}.", meta, arrays) for j in range(len(levels))
    )
    return NcStack(levels, _mlp_from(prefix + "mean.", meta, arrays), gaps,
                   kind=meta[prefix + "kind"])


def serialize_model(model, extra_meta=None):
    """Serialize an Mlp, EsModel or NcEsModel to bytes."""
    meta = {"extra": extra_meta or {}}
    arrays = {}
    if isinstance(model, Mlp):
        kind = "mlp"
        _mlp_meta(model, "net.", meta, arrays)
    elif isinstance(model, EsModel):
        if not isinstance(model.quantile_net, Mlp):
            raise ValueError(
                "oracle models hold a black-box quantile function and "
                "cannot be serialized"
            )
        kind = "es_model"
        meta["alpha"] = model.alpha
        meta["tau_used"] = _tau_json(model.tau_used)
        meta["tail"] = model.tail
        _mlp_meta(model.quantile_net, "q.", meta, arrays)
        _mlp_meta(model.es_net, "e.", meta, arrays)
    elif isinstance(model, NcEsModel):
        kind = "nc_es_model"
        meta["taus"] = [_tau_json(t) for t in model.taus]
        meta["clamped"] = model.clamped
        _stack_meta(model.quantile_stack, "q.", meta, arrays)
        _stack_meta(model.es_stack, "e.", meta, arrays)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return _pack(kind, meta, arrays)


def deserialize_model(buf):
    """Inverse of :func:`serialize_model`; returns (model, extra_meta)."""
    kind, meta, arrays = _unpack(buf)
    extra = meta.get("extra", {})
    if kind == "mlp":
        return _mlp_from("net.", meta, arrays), extra
    if kind == "es_model":
        model = EsModel(
            alpha=meta["alpha"],
            quantile_net=_mlp_from("q.", meta, arrays),
            es_net=_mlp_from("e.", meta, arrays),
            tau_used=_tau_from_json(meta["tau_used"]),
            tail=meta["tail"],
        )
        return model, extra
    if kind == "nc_es_model":
        model = NcEsModel(
            quantile_stack=_stack_from("q.", meta, arrays),
            es_stack=_stack_from("e.", meta, arrays),
            taus=tuple(_tau_from_json(t) for t in meta["taus"]),
            clamped=meta["clamped"],
        )
        return model, extra
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(path, model, extra_meta=None):
    """Write a model file; returns the number of bytes written."""
    buf = serialize_model(model, extra_meta)
    with open(path, "wb") as fh:
        fh.write(buf)
    return len(buf)


def load_model(path):
    """Read a model file; returns (model, extra_meta)."""
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())

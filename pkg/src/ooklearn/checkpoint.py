"""Checkpoint container: versioned binary, bit-exact round trip.

Layout: magic, 8-byte big-endian header length, JSON header (sorted keys),
then the raw little-endian array payload in header order.  A zip-based
container would embed timestamps and break byte-identical reruns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .binarize import BinarizerSpec
from .nn import DenseNet, LayerSpec, ModelParams
from .training import DualState

MAGIC = b"OOKLEARN-CKPT\n"
VERSION = 1


@dataclass
class CheckpointBundle:
    model: ModelParams
    binarizer: BinarizerSpec
    duals: DualState | None
    meta: dict


def _net_header(net, prefix, arrays):
    layers = []
    for i, (spec, w, b, bn) in enumerate(zip(net.specs, net.weights,
                                             net.biases, net.norms)):
        entry = {"input_dim": spec.input_dim, "output_dim": spec.output_dim,
                 "activation": spec.activation, "batch_norm": spec.batch_norm}
        arrays.append((f"{prefix}{i}.weight", w))
        arrays.append((f"{prefix}{i}.bias", b))
        if bn is not None:
            entry["bn_momentum"] = bn.momentum
            entry["bn_eps"] = bn.eps
            entry["bn_batches_seen"] = bn.batches_seen
            arrays.append((f"{prefix}{i}.gamma", bn.gamma))
            arrays.append((f"{prefix}{i}.beta", bn.beta))
            arrays.append((f"{prefix}{i}.running_mean", bn.running_mean))
            arrays.append((f"{prefix}{i}.running_var", bn.running_var))
        layers.append(entry)
    return layers


def save_checkpoint(path, model, binarizer, duals=None, meta=None):
    """Write the model, binarizer offsets, and dual state to ``path``."""
    arrays = []
    header = {
        "format": "ooklearn-checkpoint",
        "version": VERSION,
        "n": model.n,
        "m": model.m,
        "csi_mode": model.csi_mode,
        "encoder": _net_header(model.encoder, "enc", arrays),
        "decoder": _net_header(model.decoder, "dec", arrays),
        "binarizer": {
            "n": binarizer.n,
            "range_bound": binarizer.range_bound,
            "offsets": {repr(float(k)): v for k, v in sorted(binarizer.offsets.items())},
        },
        "meta": meta or {},
    }
    if duals is not None:
        header["duals"] = {"targets": list(duals.targets), "rho": duals.rho}
        arrays.append(("duals.lam", duals.lam))
    header["arrays"] = [{"name": name, "shape": list(a.shape)}
                        for name, a in arrays]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "big"))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _rebuild_net(layers, prefix, fetch):
    specs = [LayerSpec(e["input_dim"], e["output_dim"], e["activation"],
                       e["batch_norm"]) for e in layers]
    net = DenseNet(specs)
    for i, entry in enumerate(layers):
        net.weights[i] = fetch(f"{prefix}{i}.weight")
        net.biases[i] = fetch(f"{prefix}{i}.bias")
        if entry["batch_norm"]:
            bn = net.norms[i]
            bn.momentum = entry["bn_momentum"]
            bn.eps = entry["bn_eps"]
            bn.batches_seen = entry["bn_batches_seen"]
            bn.gamma = fetch(f"{prefix}{i}.gamma")
            bn.beta = fetch(f"{prefix}{i}.beta")
            bn.running_mean = fetch(f"{prefix}{i}.running_mean")
            bn.running_var = fetch(f"{prefix}{i}.running_var")
    return net


def load_checkpoint(path) -> CheckpointBundle:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not an ooklearn checkpoint")
        size = int.from_bytes(fh.read(8), "big")
        header = json.loads(fh.read(size).decode("utf-8"))
        if header.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version "
                             f"{header.get('version')}")
        stash = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated payload at {entry['name']}")
            stash[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    def fetch(name):
        if name not in stash:
            raise ValueError(f"{path}: missing array {name}")
        return stash[name]

    encoder = _rebuild_net(header["encoder"], "enc", fetch)
    decoder = _rebuild_net(header["decoder"], "dec", fetch)
    model = ModelParams(header["n"], header["m"], encoder, decoder,
                        header["csi_mode"])
    info = header["binarizer"]
    binarizer = BinarizerSpec(n=info["n"], range_bound=info["range_bound"],
                              offsets={float(k): v
                                       for k, v in info["offsets"].items()})
    duals = None
    if "duals" in header:
        duals = DualState(tuple(header["duals"]["targets"]),
                          fetch("duals.lam"), header["duals"]["rho"])
    return CheckpointBundle(model=model, binarizer=binarizer, duals=duals,
                            meta=header.get("meta", {}))

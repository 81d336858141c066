"""Versioned JSON persistence for trained models."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ard import ArdState
from .dataio import atomic_write, format_topology, parse_topology
from .laplace import LaplacePosterior
from .nn import LayerSpec, MlpParams
from .observables import AtomTopology
from .vae import DecoderParams, EncoderParams

FORMAT_NAME = "cvdisc-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelCheckpoint:
    encoder: EncoderParams
    decoder: DecoderParams
    ard_state: Optional[ArdState] = None
    posterior: Optional[LaplacePosterior] = None
    config: dict = field(default_factory=dict)
    seed: Optional[int] = None
    topology: Optional[AtomTopology] = None
    # epochs, converged flag, final lower bound; never wall-clock values
    training: dict = field(default_factory=dict)


def _floats(a):
    return [float(v) for v in np.ravel(a)]


def _net_to_doc(net: MlpParams):
    return [dict(spec.to_dict(), weight=[_floats(row) for row in W], bias=_floats(b))
            for spec, (W, b) in zip(net.specs, net.layers)]


def _net_from_doc(doc) -> MlpParams:
    specs = [LayerSpec.from_dict(layer) for layer in doc]
    layers = []
    for spec, layer in zip(specs, doc):
        W = np.asarray(layer["weight"], dtype=np.float64)
        b = np.asarray(layer["bias"], dtype=np.float64)
        if W.shape != (spec.out_dim, spec.in_dim) or b.shape != (spec.out_dim,):
            raise CheckpointError(f"layer {spec} has weight {W.shape} and bias {b.shape}")
        layers.append((W, b))
    return MlpParams.from_layers(specs, layers)


def checkpoint_to_dict(ck: ModelCheckpoint) -> dict:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "encoder": {"trunk": _net_to_doc(ck.encoder.trunk), "head_mu": _net_to_doc(ck.encoder.head_mu),
                    "head_logvar": _net_to_doc(ck.encoder.head_logvar)},
        "decoder": {"mean_net": _net_to_doc(ck.decoder.mean_net),
                    "log_sigma_sq": _floats(ck.decoder.log_sigma_sq)},
        "ard": None if ck.ard_state is None else {
            "a0": float(ck.ard_state.a0), "b0": float(ck.ard_state.b0),
            "expected_tau": _floats(ck.ard_state.expected_tau)},
        "laplace": None if ck.posterior is None else {
            "mu": _floats(ck.posterior.mu), "sigma_sq": _floats(ck.posterior.sigma_sq),
            "n_floored": int(ck.posterior.n_floored)},
        "config": dict(ck.config),
        "seed": ck.seed,
        "topology": None if ck.topology is None else format_topology(ck.topology),
        "training": dict(ck.training),
    }
    return doc


def checkpoint_from_dict(doc: dict) -> ModelCheckpoint:
    if doc.get("format") != FORMAT_NAME:
        raise CheckpointError(f"not a model checkpoint (format={doc.get('format')!r})")
    if "version" not in doc:
        raise CheckpointError("checkpoint has no version field")
    if doc["version"] != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc['version']}")
    try:
        e, d = doc["encoder"], doc["decoder"]
        enc = EncoderParams(_net_from_doc(e["trunk"]), _net_from_doc(e["head_mu"]), _net_from_doc(e["head_logvar"]))
        dec = DecoderParams(_net_from_doc(d["mean_net"]), np.asarray(d["log_sigma_sq"], dtype=np.float64))
        ard = doc.get("ard")
        ard = None if ard is None else ArdState(ard["a0"], ard["b0"], np.asarray(ard["expected_tau"], float))
        lap = doc.get("laplace")
        lap = None if lap is None else LaplacePosterior(lap["mu"], lap["sigma_sq"], lap.get("n_floored", 0))
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc!r}") from exc
    if ard is not None and ard.expected_tau.shape != (int(dec.ard_mask().sum()),):
        raise CheckpointError("ARD state does not match the decoder")
    if lap is not None and lap.mu.shape != (dec.size,):
        raise CheckpointError("Laplace posterior does not match the decoder")
    top = doc.get("topology")
    return ModelCheckpoint(enc, dec, ard, lap, dict(doc.get("config") or {}), doc.get("seed"),
                           None if top is None else parse_topology(top, "<checkpoint>"),
                           dict(doc.get("training") or {}))


def dumps(ck: ModelCheckpoint) -> str:
    # json writes floats with repr, which round-trips float64 exactly
    return json.dumps(checkpoint_to_dict(ck), indent=1, allow_nan=False) + "\n"


def loads(text: str) -> ModelCheckpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from exc
    return checkpoint_from_dict(doc)


def save_checkpoint(path, ck: ModelCheckpoint) -> None:
    atomic_write(path, dumps(ck))


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path) as fh:
        return loads(fh.read())

"""Fully connected networks with exact reverse-mode gradients.

Parameters of a network live in one flat float64 buffer; per-layer weight
matrices and bias vectors are views into it. That keeps optimizer updates,
ARD masks and Laplace posteriors working on plain vectors.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import expit

# Standard SeLU alpha. The outer lambda scale is deliberately not applied.
SELU_ALPHA = 1.6733


class Activation(str, enum.Enum):
    IDENTITY = "identity"
    TANH = "tanh"
    SELU = "selu"
    LOGSIGMOID = "logsigmoid"


def activation_apply(kind, x):
    kind = Activation(kind)
    x = np.asarray(x, dtype=np.float64)
    if kind is Activation.IDENTITY:
        return x.copy()
    if kind is Activation.TANH:
        return np.tanh(x)
    if kind is Activation.SELU:
        return np.where(x < 0, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)), x)
    return -np.logaddexp(0.0, -x)


def activation_derivative(kind, x, y=None):
    """Derivative of the activation at pre-activation ``x``.

    ``y`` is the already computed activation output; tanh reuses it.
    """
    kind = Activation(kind)
    x = np.asarray(x, dtype=np.float64)
    if kind is Activation.IDENTITY:
        return np.ones_like(x)
    if kind is Activation.TANH:
        t = np.tanh(x) if y is None else y
        return 1.0 - t * t
    if kind is Activation.SELU:
        return np.where(x < 0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)), 1.0)
    return expit(-x)


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        if int(self.in_dim) < 1 or int(self.out_dim) < 1:
            raise ValueError(f"layer dimensions must be positive, got {self.in_dim}->{self.out_dim}")
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def n_params(self) -> int:
        return self.out_dim * self.in_dim + self.out_dim

    def to_dict(self) -> dict:
        return {"in_dim": self.in_dim, "out_dim": self.out_dim, "activation": self.activation.value}

    @classmethod
    def from_dict(cls, d) -> "LayerSpec":
        return cls(int(d["in_dim"]), int(d["out_dim"]), Activation(d["activation"]))


def _check_chain(specs: Sequence[LayerSpec]) -> None:
    if not specs:
        raise ValueError("a network needs at least one layer")
    for a, b in zip(specs[:-1], specs[1:]):
        if a.out_dim != b.in_dim:
            raise ValueError(f"layer mismatch: out_dim {a.out_dim} feeds in_dim {b.in_dim}")


class MlpParams:
    """Layer specs plus a flat parameter vector.

    Layout per layer: weight (out_dim x in_dim, row-major) followed by bias.
    """

    def __init__(self, specs: Sequence[LayerSpec], flat):
        specs = tuple(specs)
        _check_chain(specs)
        flat = np.asarray(flat, dtype=np.float64)
        expected = sum(s.n_params for s in specs)
        if flat.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got shape {flat.shape}")
        self.specs = specs
        self.flat = flat

    @classmethod
    def zeros(cls, specs: Sequence[LayerSpec]) -> "MlpParams":
        return cls(specs, np.zeros(sum(s.n_params for s in specs)))

    @classmethod
    def glorot(cls, specs: Sequence[LayerSpec], rng) -> "MlpParams":
        """Uniform Glorot weights, zero biases."""
        chunks = []
        for s in specs:
            limit = np.sqrt(6.0 / (s.in_dim + s.out_dim))
            chunks.append(rng.uniform(-limit, limit, size=s.out_dim * s.in_dim))
            chunks.append(np.zeros(s.out_dim))
        return cls(specs, np.concatenate(chunks))

    @classmethod
    def from_layers(cls, specs, layers) -> "MlpParams":
        flat = np.concatenate(
            [np.concatenate([np.asarray(W, float).ravel(), np.asarray(b, float).ravel()]) for W, b in layers]
        )
        return cls(specs, flat)

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    @property
    def size(self) -> int:
        return self.flat.size

    @property
    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        out, pos = [], 0
        for s in self.specs:
            nw = s.out_dim * s.in_dim
            W = self.flat[pos:pos + nw].reshape(s.out_dim, s.in_dim)
            b = self.flat[pos + nw:pos + nw + s.out_dim]
            out.append((W, b))
            pos += s.n_params
        return out

    def weight_mask(self) -> np.ndarray:
        """Boolean mask over ``flat`` selecting weight (not bias) entries."""
        mask = np.zeros(self.size, dtype=bool)
        pos = 0
        for s in self.specs:
            mask[pos:pos + s.out_dim * s.in_dim] = True
            pos += s.n_params
        return mask

    def with_flat(self, flat) -> "MlpParams":
        return MlpParams(self.specs, flat)

    def copy(self) -> "MlpParams":
        return MlpParams(self.specs, self.flat.copy())

    def __repr__(self):
        dims = [self.specs[0].in_dim] + [s.out_dim for s in self.specs]
        return f"MlpParams(dims={dims}, n_params={self.size})"


@dataclass
class TapeEntry:
    inputs: np.ndarray
    pre: np.ndarray
    post: np.ndarray


def concat_mlp(first: MlpParams, second: MlpParams) -> MlpParams:
    return MlpParams(first.specs + second.specs, np.concatenate([first.flat, second.flat]))


def mlp_forward(params: MlpParams, x):
    """Evaluate the network on a vector or on a batch of row vectors.

    Returns ``(output, tape)``; the tape holds one :class:`TapeEntry` per
    layer and is consumed by :func:`mlp_backward`.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.shape[-1] != params.in_dim or a.ndim not in (1, 2):
        raise ValueError(f"input has shape {a.shape}, network expects last dimension {params.in_dim}")
    tape = []
    for spec, (W, b) in zip(params.specs, params.layers):
        pre = a @ W.T + b
        post = activation_apply(spec.activation, pre) if spec.activation is not Activation.IDENTITY else pre
        tape.append(TapeEntry(a, pre, post))
        a = post
    return a, tape


def mlp_backward(params: MlpParams, tape: Sequence[TapeEntry], output_grad):
    """Reverse-mode pass for a scalar whose gradient w.r.t. the output is given.

    For batched tapes the parameter gradient is summed over rows and the input
    gradient is returned per row.
    """
    if len(tape) != len(params.specs):
        raise ValueError("tape does not match network depth")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != tape[-1].post.shape:
        raise ValueError(f"output_grad shape {g.shape} does not match output {tape[-1].post.shape}")
    grads = []
    layers = params.layers
    for spec, (W, _), entry in zip(reversed(params.specs), reversed(layers), reversed(tape)):
        if spec.activation is not Activation.IDENTITY:
            g = g * activation_derivative(spec.activation, entry.pre, entry.post)
        if g.ndim == 1:
            dW = np.outer(g, entry.inputs)
            db = g
        else:
            dW = g.T @ entry.inputs
            db = g.sum(axis=0)
        grads.append((dW, db))
        g = g @ W
    grads.reverse()
    return MlpParams.from_layers(params.specs, grads), g


def build_specs(dims: Sequence[int], activations: Sequence) -> List[LayerSpec]:
    """Chain ``len(dims) - 1`` layers; ``activations`` has one entry per layer."""
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    return [LayerSpec(int(i), int(o), Activation(a)) for i, o, a in zip(dims[:-1], dims[1:], activations)]

"""Dense multilayer perceptron kernel: forward tape, exact backward, optimizers.

All tensors are float64 numpy arrays. Weights have shape (fan_out, fan_in);
inputs are single vectors (d,) or batches (B, d). The backward pass returns
parameter gradients of <upstream, output> plus the gradient with respect to
the input batch, which lets callers chain networks (coupling layers).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return expit(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name: str, activated: np.ndarray) -> np.ndarray:
    # Derivative expressed through the activation value itself. For relu the
    # subgradient at exactly 0 is taken as 0.
    if name == "relu":
        return (activated > 0.0).astype(float)
    if name == "tanh":
        return 1.0 - activated**2
    if name == "sigmoid":
        return activated * (1.0 - activated)
    if name == "identity":
        return np.ones_like(activated)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str


@dataclass
class Mlp:
    layers: list[DenseLayer]

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def n_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)


@dataclass
class Tape:
    """Forward activations: inputs[l] feeds layer l; inputs[-1] is the output."""

    inputs: list[np.ndarray]
    squeezed: bool


@dataclass
class GradBuffer:
    """Per-layer (dW, db) pairs plus the gradient w.r.t. the network input."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    wrt_input: np.ndarray | None = None


def init_mlp(sizes, rng, hidden_activation="relu", output_activation="identity",
             output_gain=1.0) -> Mlp:
    """Scaled-uniform init: W ~ U(-a, a) with a = gain * sqrt(3 / fan_in).

    Hidden relu layers use gain sqrt(2); other hidden activations use gain 1.
    The output layer uses ``output_gain`` (e.g. 0.01 for a near-uniform
    initial policy). Biases start at zero.
    """
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    layers = []
    n_layers = len(sizes) - 1
    for i in range(n_layers):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        last = i == n_layers - 1
        act = output_activation if last else hidden_activation
        if last:
            gain = output_gain
        else:
            gain = np.sqrt(2.0) if act == "relu" else 1.0
        bound = gain * np.sqrt(3.0 / fan_in)
        weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(DenseLayer(weight, np.zeros(fan_out), act))
    return Mlp(layers)


def forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Run the network, recording activations for the backward pass."""
    x = np.asarray(x, dtype=float)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.shape[1] != mlp.in_dim:
        raise ValueError(f"input dim {x.shape[1]} != network fan-in {mlp.in_dim}")
    inputs = [x]
    for layer in mlp.layers:
        z = inputs[-1] @ layer.weight.T + layer.bias
        inputs.append(_apply_activation(layer.activation, z))
    out = inputs[-1][0] if squeezed else inputs[-1]
    return out, Tape(inputs, squeezed)


def backward(mlp: Mlp, tape: Tape, upstream: np.ndarray) -> GradBuffer:
    """Exact gradient of <upstream, output> for every parameter and the input."""
    delta = np.asarray(upstream, dtype=float)
    if tape.squeezed:
        delta = delta[None, :]
    if delta.shape != tape.inputs[-1].shape:
        raise ValueError("upstream shape must match the forward output")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(mlp.layers)
    for l in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[l]
        activated = tape.inputs[l + 1]
        dz = delta * _activation_grad(layer.activation, activated)
        grads[l] = (dz.T @ tape.inputs[l], dz.sum(axis=0))
        delta = dz @ layer.weight
    wrt_input = delta[0] if tape.squeezed else delta
    return GradBuffer(grads, wrt_input)


@dataclass
class OptState:
    """Optimizer state. kind is "sgd" or "adam"; moment buffers lazily match
    the parameter shapes on first use."""

    kind: str
    lr: float
    steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    moments: list | None = field(default=None, repr=False)


def make_sgd(lr: float) -> OptState:
    return OptState("sgd", lr)


def make_adam(lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptState:
    return OptState("adam", lr, beta1=beta1, beta2=beta2, eps=eps)


def opt_step(mlp: Mlp, grads: GradBuffer, state: OptState) -> tuple[Mlp, OptState]:
    """Descend along ``grads`` in place; returns the updated pair."""
    if len(grads.layers) != len(mlp.layers):
        raise ValueError("gradient buffer does not match network depth")
    state.steps += 1
    if state.kind == "sgd":
        for layer, (dw, db) in zip(mlp.layers, grads.layers):
            layer.weight -= state.lr * dw
            layer.bias -= state.lr * db
        return mlp, state
    if state.kind != "adam":
        raise ValueError(f"unknown optimizer {state.kind!r}")
    if state.moments is None:
        state.moments = [
            (np.zeros_like(l.weight), np.zeros_like(l.weight),
             np.zeros_like(l.bias), np.zeros_like(l.bias))
            for l in mlp.layers
        ]
    b1, b2 = state.beta1, state.beta2
    t = state.steps
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for layer, (dw, db), (mw, vw, mb, vb) in zip(mlp.layers, grads.layers, state.moments):
        mw *= b1
        mw += (1 - b1) * dw
        vw *= b2
        vw += (1 - b2) * dw**2
        layer.weight -= state.lr * (mw / corr1) / (np.sqrt(vw / corr2) + state.eps)
        mb *= b1
        mb += (1 - b1) * db
        vb *= b2
        vb += (1 - b2) * db**2
        layer.bias -= state.lr * (mb / corr1) / (np.sqrt(vb / corr2) + state.eps)
    return mlp, state


def save_params(path, mlp: Mlp) -> None:
    """Checkpoint as an npz archive: per-layer tensors with a shape header."""
    arrays = {"n_layers": np.array(len(mlp.layers))}
    for i, layer in enumerate(mlp.layers):
        arrays[f"weight_{i}"] = layer.weight
        arrays[f"bias_{i}"] = layer.bias
        arrays[f"activation_{i}"] = np.array(layer.activation)
    np.savez(path, **arrays)


def load_params(path) -> Mlp:
    with np.load(path) as data:
        n = int(data["n_layers"])
        layers = [
            DenseLayer(
                np.array(data[f"weight_{i}"], dtype=float),
                np.array(data[f"bias_{i}"], dtype=float),
                str(data[f"activation_{i}"]),
            )
            for i in range(n)
        ]
    for layer in layers:
        if layer.activation not in ACTIVATIONS:
            raise ValueError(f"checkpoint has unknown activation {layer.activation!r}")
    return Mlp(layers)

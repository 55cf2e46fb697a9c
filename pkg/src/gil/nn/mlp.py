"""Fully connected networks on top of the autodiff tape."""

import hashlib
from dataclasses import dataclass

import numpy as np

from ..errors import CapabilityError, ContractError, DimensionError
from . import autodiff as ad

PIECEWISE_LINEAR = ("linear", "relu", "leaky_relu")


@dataclass
class Layer:
    weight: np.ndarray  # (n_in, n_out)
    bias: np.ndarray  # (n_out,)
    activation: str = "linear"

    @property
    def n_in(self):
        return self.weight.shape[0]

    @property
    def n_out(self):
        return self.weight.shape[1]


class MLPParams:
    """Weights, biases and activation kinds of a dense network.

    Layers compute ``act(h @ W + b)``; ``W`` is stored input-major.
    """

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ContractError("an MLP needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].n_in != layers[i - 1].n_out:
                raise DimensionError(
                    f"layer {i} expects width {layers[i].n_in}, previous layer emits {layers[i - 1].n_out}", layer=i)
        for l in layers:
            if l.activation not in ad.ACTIVATIONS:
                raise ContractError(f"unknown activation {l.activation!r}")
        self.layers = layers

    @classmethod
    def build(cls, sizes, activations, rng, zero_last=False):
        """Glorot-uniform initialisation; ``sizes`` lists every width including input and output."""
        if isinstance(activations, str):
            activations = [activations] * (len(sizes) - 2) + ["linear"]
        if len(activations) != len(sizes) - 1:
            raise ContractError("need one activation per layer")
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if zero_last and i == len(sizes) - 2:
                w = np.zeros((n_in, n_out))
            else:
                limit = np.sqrt(6.0 / (n_in + n_out))
                w = rng.uniform(-limit, limit, size=(n_in, n_out))
            layers.append(Layer(w, np.zeros(n_out), activations[i]))
        return cls(layers)

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    @property
    def activations(self):
        return [l.activation for l in self.layers]

    def arrays(self):
        """Parameter arrays in optimiser order: W0, b0, W1, b1, ..."""
        out = []
        for l in self.layers:
            out += [l.weight, l.bias]
        return out

    def named_arrays(self):
        out = []
        for i, l in enumerate(self.layers):
            out += [(f"{i}.weight", l.weight), (f"{i}.bias", l.bias)]
        return out

    def copy(self):
        return MLPParams([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def checksum(self):
        h = hashlib.sha256()
        for l in self.layers:
            h.update(l.activation.encode())
            h.update(np.ascontiguousarray(l.weight).tobytes())
            h.update(np.ascontiguousarray(l.bias).tobytes())
        return h.hexdigest()

    def equals(self, other):
        return (len(self.layers) == len(other.layers)
                and all(a.activation == b.activation and np.array_equal(a.weight, b.weight)
                        and np.array_equal(a.bias, b.bias) for a, b in zip(self.layers, other.layers)))

    def __repr__(self):
        dims = [self.n_in] + [l.n_out for l in self.layers]
        return f"MLPParams(dims={dims}, activations={self.activations})"


_NUMPY_ACT = {
    "linear": lambda z: z,
    "relu": lambda z: z * (z > 0),
    "leaky_relu": lambda z: z * np.where(z > 0, 1.0, ad.LEAKY_SLOPE),
    "tanh": np.tanh,
}


def _check_width(params, width):
    if width != params.n_in:
        raise DimensionError(f"layer 0 expects input width {params.n_in}, got {width}", layer=0)


def forward(params, x, graph):
    """Record a forward pass of ``params`` on ``graph`` and return the output node."""
    h = graph.as_node(x)
    _check_width(params, h.shape[-1])
    for layer, (w, b) in zip(params.layers, graph.bind(params)):
        h = ad.activate(ad.matmul(h, w) + b, layer.activation)
    return h


def predict(params, x):
    """Numpy-only forward pass, no tape. Bit-identical to :func:`forward`."""
    h = np.asarray(x, dtype=np.float64)
    _check_width(params, h.shape[-1])
    for layer in params.layers:
        h = _NUMPY_ACT[layer.activation](h @ layer.weight + layer.bias)
    return h


def input_gradient_node(params, input_node, graph):
    """Node holding d(output)/d(input) per row, differentiable w.r.t. ``params``.

    Only piecewise-linear activations are supported: the input gradient is then
    ``mask_L W_L^T ... mask_1 W_1^T`` with activation masks that are locally
    constant, so it can be assembled from ordinary tape ops.
    """
    x = graph.as_node(input_node)
    _check_width(params, x.shape[-1])
    if params.n_out != 1:
        raise ContractError(f"input gradient needs a scalar-output network, got width {params.n_out}")
    masks = []
    h = x.value
    for layer in params.layers:
        if layer.activation not in PIECEWISE_LINEAR:
            raise CapabilityError(
                f"input gradient unsupported for activation {layer.activation!r}; use one of {PIECEWISE_LINEAR}")
        z = h @ layer.weight + layer.bias
        if layer.activation == "relu":
            masks.append((z > 0).astype(np.float64))
        elif layer.activation == "leaky_relu":
            masks.append(np.where(z > 0, 1.0, ad.LEAKY_SLOPE))
        else:
            masks.append(np.ones_like(z))
        h = _NUMPY_ACT[layer.activation](z)
    leaves = graph.bind(params)
    delta = graph.constant(masks[-1])
    for i in range(len(params.layers) - 1, -1, -1):
        delta = ad.matmul(delta, ad.transpose(leaves[i][0]))
        if i > 0:
            delta = delta * graph.constant(masks[i - 1])
    return delta


def gradients(params, graph, grads):
    """Gradients aligned with ``params.arrays()``; zeros if ``params`` never touched the graph."""
    leaves = graph.bound(params)
    if leaves is None:
        return [np.zeros_like(a) for a in params.arrays()]
    out = []
    for w, b in leaves:
        out += [grads[w.id], grads[b.id]]
    return out

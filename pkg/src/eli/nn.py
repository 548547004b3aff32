"""Dense multilayer perceptron kernel: forward pass and analytic gradients.

All differentiation in this package is hand-derived here (parameter gradients
and input gradients share one backward recursion); there is no autodiff. The
finite-difference oracle in `gradcheck` exists to keep these derivations
honest.

Weight convention: each layer stores `weight` with shape [out, in] and
computes `y = x @ weight.T + bias`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "softplus", "identity")


class ShapeError(ValueError):
    """Tensor dimensions do not line up with what an operation expects."""


class NumericError(ArithmeticError):
    """A computation received or produced non-finite values."""


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ShapeError(f"layer weight must be 2-d, got shape {self.weight.shape}")
        if self.bias.ndim != 1 or self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError(
                f"layer bias shape {self.bias.shape} does not match "
                f"weight out-dim {self.weight.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "Layer":
        return Layer(self.weight.copy(), self.bias.copy(), self.activation)


@dataclass
class MlpParams:
    """Stack of layers; consecutive in/out dims must chain."""

    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("MlpParams needs at least one layer")
        for i in range(1, len(self.layers)):
            prev_out = self.layers[i - 1].out_dim
            if self.layers[i].in_dim != prev_out:
                raise ShapeError(
                    f"layer {i} expects in-dim {self.layers[i].in_dim} but "
                    f"layer {i - 1} produces {prev_out}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "MlpParams":
        return MlpParams([layer.copy() for layer in self.layers])

    def flat(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: [W0, b0, W1, b1, ...]."""
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def with_flat(self, arrays: list[np.ndarray]) -> "MlpParams":
        """A new MlpParams whose arrays are `arrays` in flat() order."""
        if len(arrays) != 2 * len(self.layers):
            raise ShapeError(
                f"expected {2 * len(self.layers)} arrays, got {len(arrays)}"
            )
        layers = []
        for i, layer in enumerate(self.layers):
            w, b = arrays[2 * i], arrays[2 * i + 1]
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise ShapeError(f"array shapes for layer {i} do not match the template")
            layers.append(Layer(w, b, layer.activation))
        return MlpParams(layers)


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations saved by mlp_forward.

    Holds everything both backward passes need; no recomputation of the
    forward pass is ever required.
    """

    inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "softplus":
        return np.logaddexp(0.0, pre)
    if name == "identity":
        return pre
    raise ShapeError(f"unknown activation {name!r}")


def _activation_grad(name: str, pre: np.ndarray) -> np.ndarray:
    # relu uses the subgradient 0 at exactly 0
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    if name == "softplus":
        return _sigmoid(pre)
    if name == "identity":
        return np.ones_like(pre)
    raise ShapeError(f"unknown activation {name!r}")


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on a batch.

    x: [batch, in_dim] finite float64 (coerced). Returns (output, cache) with
    output [batch, out_dim]; the cache feeds both backward passes.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"input must be [batch, features], got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("mlp_forward: input contains non-finite values")
    h = x
    inputs: list[np.ndarray] = []
    pres: list[np.ndarray] = []
    for i, layer in enumerate(params.layers):
        if h.shape[1] != layer.in_dim:
            raise ShapeError(
                f"layer {i}: got {h.shape[1]} input features, expected {layer.in_dim}"
            )
        inputs.append(h)
        pre = h @ layer.weight.T + layer.bias
        pres.append(pre)
        h = _activate(layer.activation, pre)
    if not np.all(np.isfinite(h)):
        raise NumericError("mlp_forward: output contains non-finite values")
    return h, ForwardCache(inputs=inputs, pre_activations=pres)


def _backprop(
    params: MlpParams,
    cache: ForwardCache,
    upstream: np.ndarray,
    want_params: bool,
    want_input: bool,
) -> tuple[list[np.ndarray], np.ndarray | None]:
    upstream = np.asarray(upstream, dtype=np.float64)
    if len(cache.inputs) != len(params.layers):
        raise ShapeError("cache does not belong to this network (layer count differs)")
    batch = cache.inputs[0].shape[0]
    if upstream.shape != (batch, params.out_dim):
        raise ShapeError(
            f"upstream gradient shape {upstream.shape} does not match "
            f"output shape {(batch, params.out_dim)}"
        )
    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(params.layers)) if want_params else []
    g = upstream
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        gp = g * _activation_grad(layer.activation, cache.pre_activations[i])
        if want_params:
            grads[2 * i] = gp.T @ cache.inputs[i]
            grads[2 * i + 1] = gp.sum(axis=0)
        if want_input or i > 0:
            g = gp @ layer.weight
    return grads, (g if want_input else None)


def mlp_backward_params(
    params: MlpParams, cache: ForwardCache, upstream: np.ndarray
) -> list[np.ndarray]:
    """Gradients of sum(upstream * output) w.r.t. every parameter.

    upstream: [batch, out_dim]. Returns arrays in MlpParams.flat() order.
    """
    grads, _ = _backprop(params, cache, upstream, want_params=True, want_input=False)
    return grads


def mlp_backward_input(
    params: MlpParams, cache: ForwardCache, upstream: np.ndarray
) -> np.ndarray:
    """Gradient of sum(upstream * output) w.r.t. the input batch, [batch, in_dim]."""
    _, g = _backprop(params, cache, upstream, want_params=False, want_input=True)
    assert g is not None
    return g


def kaiming_init(
    rng,
    layer_dims: list[int],
    hidden_activation: str = "relu",
    final_activation: str = "identity",
) -> MlpParams:
    """Fresh parameters for dims [in, h1, ..., out].

    Weights ~ N(0, 2/fan_in), biases zero. The final layer takes
    `final_activation`, all earlier layers `hidden_activation`.
    """
    if len(layer_dims) < 2:
        raise ShapeError(f"need at least [in, out] dims, got {layer_dims}")
    if any(d <= 0 for d in layer_dims):
        raise ShapeError(f"layer dims must be positive, got {layer_dims}")
    layers = []
    for i in range(len(layer_dims) - 1):
        fan_in, fan_out = layer_dims[i], layer_dims[i + 1]
        w = rng.gaussian((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        act = final_activation if i == len(layer_dims) - 2 else hidden_activation
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpParams(layers)

"""Small numpy MLP engine: ReLU hidden layers, linear output, analytic backprop.

Everything runs in float64. Inputs may be a single vector of shape ``(in,)``
or a batch of shape ``(batch, in)``; outputs keep the same leading shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ConfigurationError(ValueError):
    """Invalid construction argument (dimensions, sizes, names)."""


class ShapeError(ValueError):
    """Array shapes do not line up."""


class UsageError(RuntimeError):
    """An API was called with state it cannot use (e.g. a stale cache)."""


class NumericalError(ArithmeticError):
    """Non-finite values reached an optimizer."""


@dataclass
class MlpParameters:
    """Weights ``W[k]`` of shape ``(dims[k+1], dims[k])`` and biases ``b[k]``."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("number of weight/bias arrays does not match layer_dims")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[k + 1], self.layer_dims[k])
            if w.shape != want or b.shape != (want[0],):
                raise ShapeError(f"layer {k}: got W{w.shape}, b{b.shape}, expected W{want}")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, layer_dims: Sequence[int], arrays: Sequence[np.ndarray]) -> "MlpParameters":
        return cls(list(layer_dims), list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> "MlpParameters":
        return MlpParameters(
            list(self.layer_dims), [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )

    def zeros_like(self) -> "MlpParameters":
        return MlpParameters(
            list(self.layer_dims),
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
        )

    def same_shape(self, other: "MlpParameters") -> bool:
        return self.layer_dims == other.layer_dims

    def equals(self, other: "MlpParameters") -> bool:
        return self.same_shape(other) and all(
            np.array_equal(x, y) for x, y in zip(self.arrays(), other.arrays())
        )


# Gradients and Adam moments share the parameter layout.
GradientBundle = MlpParameters


@dataclass
class AdamState:
    first_moment: MlpParameters
    second_moment: MlpParameters
    step_count: int = 0


@dataclass
class ForwardCache:
    """Layer inputs and hidden pre-activations retained for the backward pass."""

    layer_dims: list[int]
    inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)
    batched: bool = True
    consumed: bool = False


def mlp_init(layer_dims: Sequence[int], seed: int | np.random.Generator) -> MlpParameters:
    """Uniform fan-in initialization, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases."""
    dims = list(layer_dims)
    if len(dims) < 2 or any(int(d) <= 0 for d in dims):
        raise ConfigurationError(f"layer_dims needs >= 2 positive entries, got {dims}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParameters(dims, weights, biases)


def mlp_forward(params: MlpParameters, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != params.layer_dims[0]:
        raise ShapeError(f"input shape {x.shape} does not match input dim {params.layer_dims[0]}")
    h = x if batched else x[None, :]
    cache = ForwardCache(list(params.layer_dims), batched=batched)
    last = params.num_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(h)
        z = h @ w.T + b
        if k < last:
            cache.pre_activations.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return (h if batched else h[0]), cache


def mlp_apply(params: MlpParameters, x: np.ndarray) -> np.ndarray:
    """Forward pass without keeping a cache."""
    h = np.asarray(x, dtype=np.float64)
    last = params.num_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h


def mlp_backward(
    params: MlpParameters, cache: ForwardCache, output_grad: np.ndarray
) -> tuple[GradientBundle, np.ndarray]:
    """Gradient of ``sum(output * output_grad)`` w.r.t. parameters and input.

    For batched caches the parameter gradient is summed over the batch. A
    cache can only be used once.
    """
    if cache.consumed:
        raise UsageError("forward cache already consumed by a backward pass")
    if cache.layer_dims != params.layer_dims or len(cache.inputs) != params.num_layers:
        raise UsageError("forward cache does not belong to these parameters")
    g = np.asarray(output_grad, dtype=np.float64)
    if not cache.batched:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], params.layer_dims[-1]):
        raise ShapeError(f"output_grad shape {np.shape(output_grad)} does not match network output")
    cache.consumed = True

    n = params.num_layers
    grad_w: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for k in range(n - 1, -1, -1):
        grad_w[k] = g.T @ cache.inputs[k]
        grad_b[k] = g.sum(axis=0)
        g = g @ params.weights[k]
        if k > 0:
            g = g * (cache.pre_activations[k - 1] > 0.0)
    input_grad = g if cache.batched else g[0]
    return MlpParameters(list(params.layer_dims), grad_w, grad_b), input_grad


def adam_init(params: MlpParameters) -> AdamState:
    return AdamState(params.zeros_like(), params.zeros_like(), 0)


def adam_step(
    params: MlpParameters, grads: GradientBundle, state: AdamState, lr: float
) -> tuple[MlpParameters, AdamState]:
    """One bias-corrected Adam step; inputs are left untouched."""
    if not params.same_shape(grads) or not params.same_shape(state.first_moment):
        raise ShapeError("params, grads and optimizer state shapes differ")
    if lr < 0:
        raise ConfigurationError(f"learning rate must be non-negative, got {lr}")
    g_arrays = grads.arrays()
    if not all(np.isfinite(g).all() for g in g_arrays):
        raise NumericalError("non-finite gradient passed to adam_step")

    t = state.step_count + 1
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), g_arrays, state.first_moment.arrays(), state.second_moment.arrays()):
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS))
        new_m.append(m)
        new_v.append(v)
    dims = params.layer_dims
    return MlpParameters.from_arrays(dims, new_p), AdamState(
        MlpParameters.from_arrays(dims, new_m), MlpParameters.from_arrays(dims, new_v), t
    )


def polyak_update(target: MlpParameters, online: MlpParameters, tau: float) -> MlpParameters:
    """Return ``tau * online + (1 - tau) * target``."""
    if not target.same_shape(online):
        raise ShapeError(f"target dims {target.layer_dims} != online dims {online.layer_dims}")
    if not 0.0 <= tau <= 1.0:
        raise ConfigurationError(f"tau must lie in [0, 1], got {tau}")
    if tau == 1.0:
        return online.copy()
    if tau == 0.0:
        return target.copy()
    arrays = [tau * o + (1.0 - tau) * t for t, o in zip(target.arrays(), online.arrays())]
    return MlpParameters.from_arrays(target.layer_dims, arrays)


# -- checkpoint files -------------------------------------------------------


def params_to_dict(params: MlpParameters, prefix: str) -> dict[str, np.ndarray]:
    out = {f"{prefix}/layer_dims": np.asarray(params.layer_dims, dtype=np.int64)}
    for i, a in enumerate(params.arrays()):
        out[f"{prefix}/{i}"] = np.ascontiguousarray(a)
    return out


def params_from_dict(data, prefix: str) -> MlpParameters:
    dims = [int(d) for d in data[f"{prefix}/layer_dims"]]
    arrays = [np.array(data[f"{prefix}/{i}"], dtype=np.float64) for i in range(2 * (len(dims) - 1))]
    return MlpParameters.from_arrays(dims, arrays)


def save_params(params: MlpParameters, path: str | Path) -> None:
    """Write a versioned ``.npz`` checkpoint; reading it back is bit-exact."""
    data = params_to_dict(params, "params")
    data["format"] = np.asarray(json.dumps({"kind": "mlp", "version": CHECKPOINT_VERSION}))
    with open(path, "wb") as fh:
        np.savez(fh, **data)


def load_params(path: str | Path) -> MlpParameters:
    with np.load(path) as data:
        header = json.loads(str(data["format"]))
        if header.get("kind") != "mlp" or header.get("version") != CHECKPOINT_VERSION:
            raise UsageError(f"unsupported checkpoint header {header}")
        return params_from_dict(data, "params")

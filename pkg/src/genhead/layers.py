"""Network layers and optimizer built on the tape: batch normalization,
layer normalization, activations, conv/dense layers, Adam, weight init,
and a flat binary checkpoint format.

Batch normalization is written compositionally with tape ops, so its backward
differentiates through the batch statistics (no stop-gradient anywhere).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .rng import SplitMix64
from .tensor import Tensor

TRAIN = "train"
INFER = "infer"

WEIGHT_INIT_STD = 0.02  # Normal(0, 0.02) for conv/dense weights
LEAKY_SLOPE = 0.2


class DegenerateBatchError(ValueError):
    """Too few elements per normalization group to form batch statistics."""


class NotTrainedError(RuntimeError):
    """Inference-mode BN used before any training step populated running stats."""


# --- batch normalization ----------------------------------------------------

class BatchNorm:
    """Per-channel batch normalization over [N,C,H,W] with trainable (gamma, beta).

    Normalization and the running-statistics blend both use the biased
    variance (divide by count). Running stats update as
    ``running <- momentum * running + (1 - momentum) * batch_stat`` and start
    at zero; inference before any training step is an error.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        if eps <= 0:
            raise ValueError("eps must be positive")
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must be in (0,1)")
        self.channels = channels
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.zeros(channels)
        self.eps = eps
        self.momentum = momentum
        self.mode = TRAIN

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise T.ShapeMismatchError(f"BatchNorm expects [N,C,H,W], got {x.shape}")
        if x.shape[1] != self.channels:
            raise T.ShapeMismatchError(
                f"BatchNorm has {self.channels} channels, input has {x.shape[1]}"
            )
        if self.mode == TRAIN:
            return self._forward_train(x)
        return self._forward_infer(x)

    def _forward_train(self, x: Tensor) -> Tensor:
        n, _, h, w = x.shape
        count = n * h * w
        if count < 2:
            raise DegenerateBatchError(
                f"need >= 2 values per channel for batch statistics, got {count}"
            )
        mu = T.reduce_mean(x, axes=(0, 2, 3))
        centered = T.sub(x, mu)
        var = T.reduce_mean(T.square(centered), axes=(0, 2, 3))
        xhat = T.div(centered, T.sqrt(T.add(var, self.eps)))
        out = T.add(T.mul(xhat, self.gamma), self.beta)
        m = self.momentum
        self.running_mean = m * self.running_mean + (1.0 - m) * mu.data
        self.running_var = m * self.running_var + (1.0 - m) * var.data
        return out

    def _forward_infer(self, x: Tensor) -> Tensor:
        if np.all(self.running_var == 0.0):
            raise NotTrainedError("running statistics never populated")
        xhat = T.div(
            T.sub(x, Tensor(self.running_mean)),
            Tensor(np.sqrt(self.running_var + self.eps)),
        )
        return T.add(T.mul(xhat, self.gamma), self.beta)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def set_mode(self, mode: str) -> None:
        if mode not in (TRAIN, INFER):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode


def batchnorm_forward_train(x: Tensor, state: BatchNorm) -> Tensor:
    if state.mode != TRAIN:
        raise ValueError("state is not in train mode")
    return state.forward(x)


def batchnorm_forward_infer(x: Tensor, state: BatchNorm) -> Tensor:
    if state.mode != INFER:
        raise ValueError("state is not in infer mode")
    return state.forward(x)


# --- layer normalization -----------------------------------------------------

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each sample over (C,H,W), then apply a per-channel affine."""
    if x.ndim != 4:
        raise T.ShapeMismatchError(f"layer_norm expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if c * h * w < 2:
        raise DegenerateBatchError("need >= 2 features per sample")
    mu = T.reduce_mean(x, axes=(1, 2, 3), keepdims=True)
    centered = T.sub(x, mu)
    var = T.reduce_mean(T.square(centered), axes=(1, 2, 3), keepdims=True)
    xhat = T.div(centered, T.sqrt(T.add(var, eps)))
    return T.add(T.mul(xhat, gain), bias)


class LayerNorm:
    def __init__(self, channels: int, eps: float = 1e-5):
        self.channels = channels
        self.eps = eps
        self.gain = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)

    def params(self):
        return [("gain", self.gain), ("bias", self.bias)]


# --- activations --------------------------------------------------------------

ACTIVATIONS = {
    "tanh": T.tanh,
    "relu": T.relu,
    "leaky-relu": lambda x: T.leaky_relu(x, LEAKY_SLOPE),
    "clip": lambda x: T.clip(x, -1.0, 1.0),
}


def activation(x: Tensor, code: str) -> Tensor:
    if code not in ACTIVATIONS:
        raise ValueError(f"unknown activation {code!r}")
    return ACTIVATIONS[code](x)


# --- parameterized layers -------------------------------------------------------

class Dense:
    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight
        self.bias = bias

    def forward(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


class Conv2d:
    def __init__(self, kernel: Tensor, bias: Tensor, stride: int, pad: int):
        self.kernel = kernel
        self.bias = bias
        self.stride = stride
        self.pad = pad

    def forward(self, x: Tensor) -> Tensor:
        return T.add(T.conv2d(x, self.kernel, self.stride, self.pad), self.bias)

    def params(self):
        return [("kernel", self.kernel), ("bias", self.bias)]


class ConvTranspose2d:
    def __init__(self, kernel: Tensor, bias: Tensor, stride: int, pad: int):
        self.kernel = kernel
        self.bias = bias
        self.stride = stride
        self.pad = pad

    def forward(self, x: Tensor) -> Tensor:
        return T.add(
            T.conv_transpose2d(x, self.kernel, self.stride, self.pad), self.bias
        )

    def params(self):
        return [("kernel", self.kernel), ("bias", self.bias)]


class Activation:
    def __init__(self, code: str):
        if code not in ACTIVATIONS:
            raise ValueError(f"unknown activation {code!r}")
        self.code = code

    def forward(self, x: Tensor) -> Tensor:
        return activation(x, self.code)

    def params(self):
        return []


class Reshape:
    """Reshape each sample to `sample_shape`, keeping the batch axis."""

    def __init__(self, sample_shape: tuple[int, ...]):
        self.sample_shape = tuple(sample_shape)

    def forward(self, x: Tensor) -> Tensor:
        return T.reshape(x, (x.shape[0],) + self.sample_shape)

    def params(self):
        return []


class Flatten:
    def forward(self, x: Tensor) -> Tensor:
        return T.reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))

    def params(self):
        return []


class Sequential:
    def __init__(self, layers: list):
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def params(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, p in layer.params():
                out.append((f"layer{i}.{name}", p))
        return out

    def set_mode(self, mode: str) -> None:
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                layer.set_mode(mode)


# --- layer specs and initialization -----------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """Declarative layer description; `kind`-specific fields may stay at defaults."""

    kind: str  # conv | conv-transpose | dense | bn | layer-norm | activation | reshape | flatten
    in_dim: int = 0
    out_dim: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    activation: str = ""
    sample_shape: tuple[int, ...] = ()


def init_weights(spec: LayerSpec, seed: int) -> dict[str, np.ndarray]:
    """Deterministic initial parameter arrays for one layer spec.

    Conv/dense weights are Normal(0, 0.02), biases zero, BN/LN affine
    parameters start at identity (gamma/gain 1, beta/bias 0).
    """
    rng = SplitMix64(seed)
    if spec.kind == "dense":
        return {
            "weight": rng.normal((spec.in_dim, spec.out_dim), std=WEIGHT_INIT_STD),
            "bias": np.zeros(spec.out_dim),
        }
    if spec.kind == "conv":
        return {
            "kernel": rng.normal(
                (spec.out_dim, spec.in_dim, spec.kernel, spec.kernel),
                std=WEIGHT_INIT_STD,
            ),
            "bias": np.zeros(spec.out_dim),
        }
    if spec.kind == "conv-transpose":
        return {
            "kernel": rng.normal(
                (spec.in_dim, spec.out_dim, spec.kernel, spec.kernel),
                std=WEIGHT_INIT_STD,
            ),
            "bias": np.zeros(spec.out_dim),
        }
    if spec.kind == "bn":
        return {"gamma": np.ones(spec.out_dim), "beta": np.zeros(spec.out_dim)}
    if spec.kind == "layer-norm":
        return {"gain": np.ones(spec.out_dim), "bias": np.zeros(spec.out_dim)}
    if spec.kind in ("activation", "reshape", "flatten"):
        return {}
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def build_layer(spec: LayerSpec, seed: int):
    w = init_weights(spec, seed)
    if spec.kind == "dense":
        return Dense(
            Tensor(w["weight"], requires_grad=True),
            Tensor(w["bias"], requires_grad=True),
        )
    if spec.kind == "conv":
        return Conv2d(
            Tensor(w["kernel"], requires_grad=True),
            Tensor(w["bias"], requires_grad=True),
            spec.stride,
            spec.pad,
        )
    if spec.kind == "conv-transpose":
        return ConvTranspose2d(
            Tensor(w["kernel"], requires_grad=True),
            Tensor(w["bias"], requires_grad=True),
            spec.stride,
            spec.pad,
        )
    if spec.kind == "bn":
        return BatchNorm(spec.out_dim)
    if spec.kind == "layer-norm":
        return LayerNorm(spec.out_dim)
    if spec.kind == "activation":
        return Activation(spec.activation)
    if spec.kind == "reshape":
        return Reshape(spec.sample_shape)
    if spec.kind == "flatten":
        return Flatten()
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def build_network(specs: list[LayerSpec], seed: int) -> Sequential:
    """Build a Sequential; each layer gets an independent derived stream."""
    from .rng import derive_seed

    return Sequential(
        [build_layer(spec, derive_seed(seed, f"layer{i}")) for i, spec in enumerate(specs)]
    )


# --- Adam ------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray


class Adam:
    """Adam with bias correction; update is p -= lr * mhat / (sqrt(vhat) + eps)."""

    def __init__(
        self,
        params: list[Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.99,
        eps: float = 1e-8,
    ):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must be in [0,1)")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.state = [
            AdamState(np.zeros_like(p.data), np.zeros_like(p.data)) for p in self.params
        ]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, st in zip(self.params, self.state):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise T.ShapeMismatchError(
                    f"gradient shape {g.shape} != parameter shape {p.data.shape}"
                )
            st.m = b1 * st.m + (1.0 - b1) * g
            st.v = b2 * st.v + (1.0 - b2) * np.square(g)
            mhat = st.m / c1
            vhat = st.v / c2
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# --- checkpoints -------------------------------------------------------------------
#
# File layout: one JSON header line (utf-8, '\n'-terminated) listing tensor
# names, shapes and byte offsets into the payload, then the flat payload of
# little-endian float64 values in header order.

def save_checkpoint(params: list[tuple[str, Tensor]], path) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, p in params:
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        entries.append(
            {"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(raw)}
        )
        offset += len(raw)
        blobs.append(raw)
    header = json.dumps({"tensors": entries}) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    out = {}
    for entry in header["tensors"]:
        start = entry["offset"]
        raw = payload[start : start + entry["nbytes"]]
        out[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()
    return out

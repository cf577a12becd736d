"""Layered regressors with a flat weight vector and hand-written backprop.

Image tensors are laid out (batch, channels, height, width). Every network
ends in a single linear unit, so predictions are shape (batch,).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "linear")
FNN_HIDDEN = (400, 200, 100, 50)


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # dense | conv2d | maxpool2d | reshape
    size: int = 0  # units (dense) or filters (conv2d)
    kernel: int = 0  # conv kernel or pool size
    stride: int = 1
    activation: str = "linear"
    shape: tuple = field(default=())  # target shape for reshape

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        d["shape"] = tuple(d.get("shape", ()))
        return cls(**d)


def _act(z, name):
    return np.maximum(z, 0.0) if name == "relu" else z


def _act_grad(z, g, name):
    return g * (z > 0) if name == "relu" else g


class Dense:
    def __init__(self, in_shape, spec: LayerSpec):
        if len(in_shape) != 1:
            raise ShapeError(f"dense layer needs flat input, got {in_shape}")
        self.n_in, self.n_out = in_shape[0], spec.size
        self.act = spec.activation
        self.out_shape = (self.n_out,)
        self.n_params = self.n_in * self.n_out + self.n_out
        self.fan_in = self.n_in

    def split(self, w):
        k = self.n_in * self.n_out
        return w[:k].reshape(self.n_in, self.n_out), w[k:]

    def forward(self, x, w):
        W, b = self.split(w)
        z = x @ W + b
        return _act(z, self.act), (x, z)

    def backward(self, g, w, cache):
        x, z = cache
        W, _ = self.split(w)
        g = _act_grad(z, g, self.act)
        return g @ W.T, np.concatenate([(x.T @ g).ravel(), g.sum(axis=0)])


class Conv2D:
    def __init__(self, in_shape, spec: LayerSpec):
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d needs (channels, h, w) input, got {in_shape}")
        c, h, w = in_shape
        k, s = spec.kernel, spec.stride
        ho, wo = (h - k) // s + 1, (w - k) // s + 1
        if k < 1 or ho < 1 or wo < 1:
            raise ShapeError(f"kernel {k} does not fit input {h}x{w}")
        self.c, self.f, self.k, self.s = c, spec.size, k, s
        self.in_shape, self.out_shape = tuple(in_shape), (spec.size, ho, wo)
        self.act = spec.activation
        self.n_params = self.f * c * k * k + self.f
        self.fan_in = c * k * k

    def split(self, w):
        n = self.f * self.c * self.k * self.k
        return w[:n].reshape(self.f, self.c, self.k, self.k), w[n:]

    def _windows(self, x):
        win = sliding_window_view(x, (self.k, self.k), axis=(2, 3))
        return win[:, :, :: self.s, :: self.s]

    def forward(self, x, w):
        W, b = self.split(w)
        win = self._windows(x)
        z = np.einsum("bchwij,fcij->bfhw", win, W, optimize=True) + b[None, :, None, None]
        return _act(z, self.act), (x, z)

    def backward(self, g, w, cache):
        x, z = cache
        W, _ = self.split(w)
        g = _act_grad(z, g, self.act)
        win = self._windows(x)
        dW = np.einsum("bchwij,bfhw->fcij", win, g, optimize=True)
        db = g.sum(axis=(0, 2, 3))
        dx = np.zeros_like(x)
        _, ho, wo = self.out_shape
        s = self.s
        for i in range(self.k):
            for j in range(self.k):
                dx[:, :, i : i + ho * s : s, j : j + wo * s : s] += np.einsum(
                    "bfhw,fc->bchw", g, W[:, :, i, j], optimize=True
                )
        return dx, np.concatenate([dW.ravel(), db])


class MaxPool2D:
    n_params = 0
    fan_in = 1

    def __init__(self, in_shape, spec: LayerSpec):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool2d needs (channels, h, w) input, got {in_shape}")
        c, h, w = in_shape
        k, s = spec.kernel, spec.stride
        ho, wo = (h - k) // s + 1, (w - k) // s + 1
        if k < 1 or ho < 1 or wo < 1:
            raise ShapeError(f"pool {k} does not fit input {h}x{w}")
        self.k, self.s = k, s
        self.in_shape, self.out_shape = tuple(in_shape), (c, ho, wo)

    def forward(self, x, w):
        win = sliding_window_view(x, (self.k, self.k), axis=(2, 3))[:, :, :: self.s, :: self.s]
        flat = win.reshape(win.shape[:4] + (-1,))
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return out, (x.shape, arg)

    def backward(self, g, w, cache):
        shape, arg = cache
        dx = np.zeros(shape)
        _, ho, wo = self.out_shape
        s = self.s
        for i in range(self.k):
            for j in range(self.k):
                dx[:, :, i : i + ho * s : s, j : j + wo * s : s] += g * (arg == i * self.k + j)
        return dx, np.zeros(0)


class Reshape:
    n_params = 0
    fan_in = 1

    def __init__(self, in_shape, spec: LayerSpec):
        target = tuple(spec.shape) if spec.shape else (int(np.prod(in_shape)),)
        if int(np.prod(target)) != int(np.prod(in_shape)):
            raise ShapeError(f"cannot reshape {in_shape} to {target}")
        self.in_shape, self.out_shape = tuple(in_shape), target

    def forward(self, x, w):
        return x.reshape((len(x),) + self.out_shape), None

    def backward(self, g, w, cache):
        return g.reshape((len(g),) + self.in_shape), np.zeros(0)


_KINDS = {"dense": Dense, "conv2d": Conv2D, "maxpool2d": MaxPool2D, "reshape": Reshape}


class NetworkModel:
    """A stack of layers sharing one flat float64 weight vector."""

    def __init__(self, input_shape, specs, weights=None):
        self.input_shape = tuple(int(v) for v in np.atleast_1d(input_shape))
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in specs]
        self.layers, self.offsets = [], [0]
        shape = self.input_shape
        for spec in self.specs:
            if spec.kind not in _KINDS:
                raise ValueError(f"unknown layer kind {spec.kind!r}")
            if spec.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {spec.activation!r}")
            layer = _KINDS[spec.kind](shape, spec)
            self.layers.append(layer)
            self.offsets.append(self.offsets[-1] + layer.n_params)
            shape = layer.out_shape
        if shape != (1,):
            raise ShapeError(f"network must end in a single unit, ends in {shape}")
        self.weights = np.zeros(self.n_params) if weights is None else np.array(weights, dtype=float)
        if self.weights.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} weights, got {self.weights.shape}")

    @property
    def n_params(self) -> int:
        return self.offsets[-1]

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    def layer_weights(self, i, w=None):
        w = self.weights if w is None else w
        return w[self.offsets[i] : self.offsets[i + 1]]

    def init_weights(self, rng: np.random.Generator) -> "NetworkModel":
        """He-uniform weights scaled by fan-in, zero biases."""
        w = np.zeros(self.n_params)
        for i, layer in enumerate(self.layers):
            if not layer.n_params:
                continue
            seg = w[self.offsets[i] : self.offsets[i + 1]]
            n_bias = layer.out_shape[0]
            lim = math.sqrt(6.0 / layer.fan_in)
            seg[:-n_bias] = rng.uniform(-lim, lim, layer.n_params - n_bias)
        self.weights = w
        return self

    def copy(self) -> "NetworkModel":
        return NetworkModel(self.input_shape, self.specs, self.weights.copy())

    def _check_batch(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim < 1:
            raise ShapeError("batch must have a leading batch axis")
        if x.shape[1:] == self.input_shape:
            return x
        if x.ndim == 2 and x.shape[1] == self.input_dim:
            return x.reshape((len(x),) + self.input_shape)
        raise ShapeError(f"batch shape {x.shape[1:]} does not match input {self.input_shape}")

    def forward(self, x, w=None, keep=False):
        w = self.weights if w is None else w
        h = self._check_batch(x)
        caches = []
        for i, layer in enumerate(self.layers):
            h, c = layer.forward(h, self.layer_weights(i, w))
            caches.append(c)
        out = h.reshape(len(h))
        return (out, caches) if keep else out

    def gradients(self, x, targets, w=None):
        """Return (mse, d mse / d weights, d mse / d input)."""
        w = self.weights if w is None else w
        x = self._check_batch(x)
        targets = np.asarray(targets, dtype=float)
        if targets.shape != (len(x),):
            raise ShapeError(f"targets shape {targets.shape} does not match batch of {len(x)}")
        pred, caches = self.forward(x, w, keep=True)
        r = pred - targets
        loss = float(np.mean(r**2))
        g = (2.0 / len(r)) * r[:, None]
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            g, grads[i] = self.layers[i].backward(g, self.layer_weights(i, w), caches[i])
        return loss, np.concatenate(grads) if grads else np.zeros(0), g

    def describe(self) -> list[str]:
        rows, shape = [], self.input_shape
        for spec, layer in zip(self.specs, self.layers):
            rows.append(f"{spec.kind:9s} {str(shape):>14s} -> {str(layer.out_shape):<14s} params={layer.n_params}")
            shape = layer.out_shape
        return rows


def forward(model: NetworkModel, batch) -> np.ndarray:
    return model.forward(batch)


def backward(model: NetworkModel, batch, targets) -> tuple[float, np.ndarray]:
    loss, grad, _ = model.gradients(batch, targets)
    return loss, grad


def fnn_specs(hidden=FNN_HIDDEN) -> list[LayerSpec]:
    specs = [LayerSpec("dense", size=h, activation="relu") for h in hidden]
    return specs + [LayerSpec("dense", size=1)]


def fnn_build(input_dim: int, hidden=FNN_HIDDEN) -> NetworkModel:
    """Fully connected regressor input -> 400 -> 200 -> 100 -> 50 -> 1."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    return NetworkModel((input_dim,), fnn_specs(hidden))


CNN_VARIANTS = {"d5": 2, "d8": 3, "d10": 3}


def cnn_specs(side: int, variant: str) -> list[LayerSpec]:
    if variant not in CNN_VARIANTS:
        raise ValueError(f"unknown CNN variant {variant!r}")
    k = CNN_VARIANTS[variant]
    return [
        LayerSpec("reshape", shape=(1, side, side)),
        LayerSpec("conv2d", size=32, kernel=k, activation="relu"),
        LayerSpec("maxpool2d", kernel=k),
        LayerSpec("conv2d", size=64, kernel=k, activation="relu"),
        LayerSpec("maxpool2d", kernel=k),
        LayerSpec("conv2d", size=64, kernel=k, activation="relu"),
        LayerSpec("reshape"),
        LayerSpec("dense", size=64, activation="relu"),
        LayerSpec("dense", size=32, activation="relu"),
        LayerSpec("dense", size=1),
    ]


def cnn_build(side: int, variant: str) -> NetworkModel:
    """Three conv/pool stages (stride 1) then dense 64 -> 32 -> 1 on a side x side grid."""
    return NetworkModel((side * side,), cnn_specs(side, variant))

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg.blas import daxpy

from . import layers as L

INIT_STD = 0.02


class StaleCacheError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    options: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self):
        if self.kind not in L.KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "options", tuple(sorted(dict(self.options).items())))
        if self.kind in ("conv2d", "conv2d_transpose"):
            if self.get("kernel", 3) != 3 or self.get("stride", 1) != 1:
                raise ValueError("conv layers use a 3x3 kernel with stride 1")
            if self.get("padding", "valid") not in ("same", "valid"):
                raise ValueError("padding must be 'same' or 'valid'")

    def get(self, key, default=None):
        return dict(self.options).get(key, default)

    def text(self) -> str:
        opts = ",".join(f"{k}={v}" for k, v in self.options)
        return f"{self.kind}({opts})"

    @classmethod
    def parse(cls, text: str) -> "LayerSpec":
        kind, _, rest = text.strip().partition("(")
        rest = rest.rstrip(")")
        opts = []
        for item in filter(None, rest.split(",")):
            k, _, v = item.partition("=")
            opts.append((k, _parse_scalar(v)))
        return cls(kind, tuple(opts))


def _parse_scalar(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def conv2d(cin, cout, padding="valid", depthwise=False):
    opts = {"in_channels": cin, "out_channels": cout, "padding": padding}
    if depthwise:
        opts["depthwise"] = 1
    return LayerSpec("conv2d", tuple(opts.items()))


def conv2d_transpose(cin, cout, padding="same", depthwise=False):
    opts = {"in_channels": cin, "out_channels": cout, "padding": padding}
    if depthwise:
        opts["depthwise"] = 1
    return LayerSpec("conv2d_transpose", tuple(opts.items()))


def dense(cin, cout):
    return LayerSpec("dense", (("in_features", cin), ("out_features", cout)))


def batchnorm(momentum=0.99, eps=1e-7):
    return LayerSpec("batchnorm", (("momentum", momentum), ("eps", eps)))


def leaky_relu(slope=0.2):
    return LayerSpec("leaky_relu", (("slope", slope),))


def dropout(rate=0.3):
    return LayerSpec("dropout", (("rate", rate),))


def simple(kind):
    return LayerSpec(kind)


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, ...]  # per sample, no batch axis
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shapes()  # validates

    def shapes(self) -> list[tuple[int, ...]]:
        """Per-sample shape after every layer, starting with the input."""
        out = [self.input_shape]
        for i, spec in enumerate(self.layers):
            try:
                out.append(tuple(L.build(spec).out_shape(out[-1])))
            except L.ShapeError as exc:
                raise L.ShapeError(f"layer {i} ({spec.kind}): {exc}") from None
        return out

    @property
    def output_shape(self):
        return self.shapes()[-1]

    def text(self) -> str:
        lines = ["input " + "x".join(map(str, self.input_shape))]
        lines += [s.text() for s in self.layers]
        return "\n".join(lines)

    @classmethod
    def parse(cls, text: str) -> "NetworkSpec":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        head = lines[0].split()
        if head[0] != "input":
            raise ValueError("network text must start with an input line")
        shape = tuple(int(s) for s in head[1].split("x"))
        return cls(shape, tuple(LayerSpec.parse(ln) for ln in lines[1:]))


@dataclass
class NetworkState:
    spec: NetworkSpec
    params: list[dict[str, np.ndarray]]
    version: int = 0
    _kernels: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self._kernels = [L.build(s) for s in self.spec.layers]

    @property
    def kernels(self):
        return self._kernels

    def arrays(self):
        """(layer index, name, array) in canonical checkpoint order."""
        for i, (k, p) in enumerate(zip(self._kernels, self.params)):
            for name in k.trainable + k.buffers:
                yield i, name, p[name]

    def n_params(self, trainable_only=True) -> int:
        total = 0
        for k, p in zip(self._kernels, self.params):
            names = k.trainable if trainable_only else k.trainable + k.buffers
            total += sum(p[n].size for n in names)
        return total

    def copy(self) -> "NetworkState":
        return NetworkState(self.spec, [{k: v.copy() for k, v in p.items()} for p in self.params],
                            self.version)


@dataclass
class Cache:
    layer_caches: list
    state_id: int
    version: int
    train: bool


def param_count(spec: NetworkSpec, trainable_only=True) -> int:
    total = 0
    for s, shp in zip(spec.layers, spec.shapes()):
        k = L.build(s)
        names = k.trainable if trainable_only else k.trainable + k.buffers
        for name, pshape in k.param_shapes(shp).items():
            if name in names:
                total += int(np.prod(pshape))
    return total


def _truncated_normal(rng, shape, std):
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_params(spec: NetworkSpec, seed: int) -> NetworkState:
    rng = np.random.default_rng(seed)
    params = []
    for s, shp in zip(spec.layers, spec.shapes()):
        p = {}
        for name, pshape in L.build(s).param_shapes(shp).items():
            if name == "W":
                p[name] = _truncated_normal(rng, pshape, INIT_STD)
            elif name in ("gamma", "running_var"):
                p[name] = np.ones(pshape)
            else:
                p[name] = np.zeros(pshape)
        params.append(p)
    return NetworkState(spec, params)


def forward(net: NetworkState, x, mode="infer", rng=None):
    """Run the network on a batch ``x`` of shape ``(B, *input_shape)``.

    Train mode activates dropout and normalizes with batch statistics; the
    running averages are only touched by :func:`update_running_stats`.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    train = mode == "train"
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape[1:]) != net.spec.input_shape:
        raise L.ShapeError(
            f"layer 0 ({net.spec.layers[0].kind}): input shape {tuple(x.shape[1:])} "
            f"does not match expected {net.spec.input_shape}"
        )
    if train and rng is None:
        rng = np.random.default_rng(0)
    caches = []
    for k, p in zip(net.kernels, net.params):
        x, c = k.forward(p, x, train, rng)
        caches.append(c)
    return x, Cache(caches, id(net), net.version, train)


def backward(net: NetworkState, cache: Cache, dout):
    """Returns ``(param_grads, input_grad)``; grads cover trainable arrays only."""
    if not cache.train:
        raise StaleCacheError("backward needs a cache from forward(mode='train')")
    if cache.state_id != id(net) or cache.version != net.version:
        raise StaleCacheError("cache was produced by a different or since-updated network state")
    grads = [None] * len(net.kernels)
    for i in range(len(net.kernels) - 1, -1, -1):
        dout, g = net.kernels[i].backward(net.params[i], cache.layer_caches[i], dout)
        grads[i] = g
    return grads, dout


def update_running_stats(net: NetworkState, cache: Cache) -> None:
    for k, p, c in zip(net.kernels, net.params, cache.layer_caches):
        if isinstance(k, L.BatchNorm):
            mu, var = k.batch_stats(c)
            p["running_mean"] *= k.momentum
            p["running_mean"] += (1.0 - k.momentum) * mu
            p["running_var"] *= k.momentum
            p["running_var"] += (1.0 - k.momentum) * var


def add_grads(a, b):
    return [{k: a_i[k] + b_i[k] for k in a_i} for a_i, b_i in zip(a, b)]


def _axpy(a, x, y):
    """``y += a * x`` in place."""
    if y.flags.c_contiguous and y.size > 4096:
        daxpy(np.ascontiguousarray(x).ravel(), y.reshape(-1), a=a)
    else:
        y += a * x


def sgd_step(net: NetworkState, grads, lr: float) -> NetworkState:
    """Plain SGD, no momentum or decay.  Updates ``net`` in place."""
    for i, g in enumerate(grads):
        for name, arr in g.items():
            if arr.shape != net.params[i][name].shape:
                raise L.ShapeError(f"layer {i} {name}: gradient shape {arr.shape} "
                                   f"!= parameter shape {net.params[i][name].shape}")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteGradientError(f"non-finite gradient in layer {i} ({name})")
    if lr != 0.0:
        for i, g in enumerate(grads):
            for name, arr in g.items():
                _axpy(-lr, arr, net.params[i][name])
    net.version += 1
    return net


def flat_params(net: NetworkState) -> np.ndarray:
    return np.concatenate([a.ravel() for _, _, a in net.arrays()])


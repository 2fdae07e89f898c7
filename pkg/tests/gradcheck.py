"""Central finite-difference checks for nn_core networks."""
import numpy as np

from lmpgan.nn_core import NetworkSpec, backward, forward, init_params
from lmpgan.nn_core import layers as L
from lmpgan.nn_core import network as nn

H = 1e-5
KINK = 1e-3
# A bias feeding a batchnorm has an exactly zero gradient; there the FD
# estimate is pure round-off (~1e-10) and is held to an absolute bound instead.
ZERO_GRAD = 1e-12
FD_NOISE = 1e-8


def _rel(a, n):
    a, n = np.ravel(a), np.ravel(n)
    if np.max(np.abs(a)) < ZERO_GRAD:
        return 0.0 if np.max(np.abs(n)) < FD_NOISE else float("inf")
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return float(np.linalg.norm(a - n) / scale)


def _near_kink(net, cache):
    for k, c in zip(net.kernels, cache.layer_caches):
        if isinstance(k, (L.ReLU, L.LeakyReLU)) and np.min(np.abs(c)) < KINK:
            return True
    return False


def randomize(net, rng, scale=0.5):
    """Weights large enough that every path carries signal."""
    for k, p in zip(net.kernels, net.params):
        for name in k.trainable:
            if name == "gamma":
                p[name][...] = rng.uniform(0.5, 1.5, p[name].shape)
            else:
                p[name][...] = rng.normal(0.0, scale, p[name].shape)
    return net


def check(spec: NetworkSpec, rng, batch=3, coords=4, scale=0.5, tries=200):
    """Max relative error over sampled coordinates of every parameter array and the input.

    Redraws inputs until no ReLU/LeakyReLU pre-activation lies within ``KINK`` of 0.
    """
    net = randomize(init_params(spec, int(rng.integers(1 << 31))), rng, scale)
    seed = int(rng.integers(1 << 31))
    for _ in range(tries):
        x = rng.normal(0.0, 1.0, (batch, *spec.input_shape))
        out, cache = forward(net, x, "train", np.random.default_rng(seed))
        if not _near_kink(net, cache):
            break
    else:
        raise RuntimeError("could not find an input away from activation kinks")
    r = rng.normal(0.0, 1.0, out.shape)
    grads, dx = backward(net, cache, r)

    def f():
        return float(np.sum(r * forward(net, x, "train", np.random.default_rng(seed))[0]))

    def fd(arr, idx):
        old = arr[idx]
        arr[idx] = old + H
        fp = f()
        arr[idx] = old - H
        fm = f()
        arr[idx] = old
        return (fp - fm) / (2 * H)

    errs = []
    targets = [(x, dx)] + [(net.params[i][name], g[name])
                           for i, g in enumerate(grads) for name in g]
    for arr, g in targets:
        flat = rng.choice(arr.size, size=min(coords, arr.size), replace=False)
        idxs = [np.unravel_index(j, arr.shape) for j in flat]
        num = np.array([fd(arr, idx) for idx in idxs])
        ana = np.array([g[idx] for idx in idxs])
        errs.append(_rel(ana, num))
    return max(errs)


def random_layer_spec(kind, rng):
    """A one-layer network of ``kind`` with random small shapes."""
    c = int(rng.integers(1, 4))
    m = int(rng.integers(1, 4))
    h, w = int(rng.integers(3, 6)), int(rng.integers(3, 6))
    pad = str(rng.choice(["same", "valid"]))
    depth = bool(rng.integers(2))
    if kind == "conv2d":
        return NetworkSpec((c, h, w), (nn.conv2d(c, m, pad, depthwise=depth),))
    if kind == "conv2d_transpose":
        return NetworkSpec((c, h, w), (nn.conv2d_transpose(c, m, pad, depthwise=depth),))
    if kind == "dense":
        return NetworkSpec((c * h,), (nn.dense(c * h, m),))
    if kind == "batchnorm":
        shape = [(c * h,), (c, h, w), (c, m, h, w)][int(rng.integers(3))]
        return NetworkSpec(shape, (nn.batchnorm(),))
    if kind == "leaky_relu":
        return NetworkSpec((c, h, w), (nn.leaky_relu(0.2),))
    if kind == "dropout":
        return NetworkSpec((c, h, w), (nn.dropout(0.3),))
    if kind == "concat_grouped":
        return NetworkSpec((c, m, h, w), (nn.simple(kind),))
    return NetworkSpec((c, h, w), (nn.simple(kind),))


LAYER_KINDS = tuple(L.KINDS)

"""Layer kernels.

All spatial tensors are ``(N, C, H, W)``; depthwise layers emit
``(N, C, m, H, W)`` so that ``concat_grouped`` has something to merge.
Conv weights are ``(C_out, C_in, 3, 3)``.  A transpose-conv layer mapping
``a -> b`` channels stores ``(a, b, 3, 3)``: it is the adjoint of a conv
``b -> a`` with the same kernel.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KERNEL = 3


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# conv primitives


def _pad(x, p):
    if p == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    return np.pad(x, width)


def _im2col(x, pad, k):
    """``(N, C, H, W)`` -> ``(N*Ho*Wo, C*k*k)`` patch matrix."""
    n, c = x.shape[:2]
    win = sliding_window_view(_pad(x, pad), (k, k), axis=(2, 3))  # N,C,Ho,Wo,k,k
    ho, wo = win.shape[2:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k), (ho, wo)


def _to_rows(a):
    n, c, h, w = a.shape
    return a.transpose(0, 2, 3, 1).reshape(n * h * w, c)


def _from_rows(rows, n, h, w):
    return np.ascontiguousarray(rows.reshape(n, h, w, -1).transpose(0, 3, 1, 2))


def conv2d(x, w, pad):
    """Cross-correlation, stride 1. ``x (N,Ci,H,W)``, ``w (Co,Ci,k,k)``."""
    cols, (ho, wo) = _im2col(x, pad, w.shape[2])
    return _from_rows(cols @ w.reshape(w.shape[0], -1).T, x.shape[0], ho, wo)


def conv2d_grad_w(x, dout, pad, k=KERNEL):
    cols, _ = _im2col(x, pad, k)
    dw = _to_rows(dout).T @ cols
    return dw.reshape(dout.shape[1], x.shape[1], k, k)


def conv2d_grad_x(dout, w, pad):
    """Adjoint of :func:`conv2d` in ``x``."""
    n, _, ho, wo = dout.shape
    co, ci, k, _ = w.shape
    dcols = (_to_rows(dout) @ w.reshape(co, -1)).reshape(n, ho, wo, ci, k, k)
    dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # N,Ci,k,k,Ho,Wo
    h, wd = ho + k - 1, wo + k - 1
    dxp = np.zeros((n, ci, h, wd))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + ho, j : j + wo] += dcols[:, :, i, j]
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dxp)


def conv2d_transpose(x, w, pad):
    """``x (N,a,H,W)``, ``w (a,b,k,k)`` -> ``(N,b,H+k-1-2*pad, ...)``."""
    return conv2d_grad_x(x, w, pad)


def _pad_amount(padding):
    return (KERNEL - 1) // 2 if padding == "same" else 0


# ---------------------------------------------------------------------------
# layers


class Layer:
    """Stateless kernel; parameters live in the network state."""

    trainable: tuple[str, ...] = ()
    buffers: tuple[str, ...] = ()

    def __init__(self, spec):
        self.spec = spec

    def param_shapes(self, in_shape):
        return {}

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, p, x, train, rng):
        raise NotImplementedError

    def backward(self, p, cache, dout):
        raise NotImplementedError


class Conv(Layer):
    trainable = ("W", "b")

    def __init__(self, spec):
        super().__init__(spec)
        self.transpose = spec.kind == "conv2d_transpose"
        self.pad = _pad_amount(spec.get("padding", "valid"))
        self.depthwise = int(spec.get("depthwise", 0))
        self.cin = int(spec.get("in_channels"))
        self.cout = int(spec.get("out_channels"))

    def _spatial(self, h):
        return h + (KERNEL - 1) - 2 * self.pad if self.transpose else h - (KERNEL - 1) + 2 * self.pad

    def param_shapes(self, in_shape):
        if self.depthwise:
            return {"W": (self.cin, self.cout, KERNEL, KERNEL), "b": (self.cin, self.cout)}
        if self.transpose:
            return {"W": (self.cin, self.cout, KERNEL, KERNEL), "b": (self.cout,)}
        return {"W": (self.cout, self.cin, KERNEL, KERNEL), "b": (self.cout,)}

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.cin:
            raise ShapeError(f"expected ({self.cin}, H, W), got {in_shape}")
        c, h, w = in_shape
        ho, wo = self._spatial(h), self._spatial(w)
        if ho < 1 or wo < 1:
            raise ShapeError(f"input {in_shape} too small for a {KERNEL}x{KERNEL} kernel")
        if self.depthwise:
            return (self.cin, self.cout, ho, wo)
        return (self.cout, ho, wo)

    # one output group per input channel, multiplier = cout
    def _kernel_for(self, w, c):
        if self.transpose:
            return w[c : c + 1]  # (1, m, k, k)
        return w[c][:, None]  # (m, 1, k, k)

    def forward(self, p, x, train, rng):
        W, b = p["W"], p["b"]
        op = conv2d_transpose if self.transpose else conv2d
        if self.depthwise:
            out = np.stack(
                [op(x[:, c : c + 1], self._kernel_for(W, c), self.pad) for c in range(self.cin)],
                axis=1,
            )
            out += b[None, :, :, None, None]
        else:
            out = op(x, W, self.pad) + b[None, :, None, None]
        return out, x

    def backward(self, p, x, dout):
        W = p["W"]
        if self.depthwise:
            dW = np.empty_like(W)
            dx = np.empty_like(x)
            for c in range(self.cin):
                xc, dc = x[:, c : c + 1], dout[:, c]
                kc = self._kernel_for(W, c)
                if self.transpose:
                    dx[:, c : c + 1] = conv2d(dc, kc, self.pad)
                    dW[c] = conv2d_grad_w(dc, xc, self.pad)[0]
                else:
                    dx[:, c : c + 1] = conv2d_grad_x(dc, kc, self.pad)
                    dW[c] = conv2d_grad_w(xc, dc, self.pad)[:, 0]
            db = dout.sum(axis=(0, 3, 4))
        elif self.transpose:
            dx = conv2d(dout, W, self.pad)
            # <g, convT(x, W)> = <conv(g, W), x>
            dW = conv2d_grad_w(dout, x, self.pad)
            db = dout.sum(axis=(0, 2, 3))
        else:
            dx = conv2d_grad_x(dout, W, self.pad)
            dW = conv2d_grad_w(x, dout, self.pad)
            db = dout.sum(axis=(0, 2, 3))
        return dx, {"W": dW, "b": db}


class Dense(Layer):
    trainable = ("W", "b")

    def __init__(self, spec):
        super().__init__(spec)
        self.cin = int(spec.get("in_features"))
        self.cout = int(spec.get("out_features"))

    def param_shapes(self, in_shape):
        return {"W": (self.cin, self.cout), "b": (self.cout,)}

    def out_shape(self, in_shape):
        if in_shape != (self.cin,):
            raise ShapeError(f"expected ({self.cin},), got {in_shape}")
        return (self.cout,)

    def forward(self, p, x, train, rng):
        return x @ p["W"] + p["b"], x

    def backward(self, p, x, dout):
        return dout @ p["W"].T, {"W": x.T @ dout, "b": dout.sum(axis=0)}


class BatchNorm(Layer):
    trainable = ("gamma", "beta")
    buffers = ("running_mean", "running_var")

    def __init__(self, spec):
        super().__init__(spec)
        self.eps = float(spec.get("eps", 1e-7))
        self.momentum = float(spec.get("momentum", 0.99))

    @staticmethod
    def _axes(ndim):
        # batch axis plus trailing spatial axes; everything else is a feature
        return (0,) + tuple(range(ndim - 2, ndim)) if ndim >= 4 else (0,)

    def param_shapes(self, in_shape):
        feat = in_shape[:-2] if len(in_shape) >= 3 else in_shape
        return {"gamma": feat, "beta": feat, "running_mean": feat, "running_var": feat}

    def _bcast(self, a, ndim):
        return a.reshape(a.shape + (1, 1)) if ndim >= 4 else a

    def forward(self, p, x, train, rng):
        nd = x.ndim
        g = self._bcast(p["gamma"], nd)
        bt = self._bcast(p["beta"], nd)
        if train:
            axes = self._axes(nd)
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - self._bcast(mu, nd)) * self._bcast(inv, nd)
            return g * xhat + bt, (xhat, inv, mu, var, x.size // mu.size)
        mu = self._bcast(p["running_mean"], nd)
        inv = 1.0 / np.sqrt(self._bcast(p["running_var"], nd) + self.eps)
        xhat = (x - mu) * inv
        return g * xhat + bt, (xhat, None, None, None, None)

    def backward(self, p, cache, dout):
        xhat, inv, mu, var, m = cache
        if inv is None:
            raise RuntimeError("batchnorm backward requires a train-mode cache")
        nd = dout.ndim
        axes = self._axes(nd)
        dgamma = (dout * xhat).sum(axis=axes)
        dbeta = dout.sum(axis=axes)
        dxhat = dout * self._bcast(p["gamma"], nd)
        s1 = self._bcast(dxhat.sum(axis=axes), nd)
        s2 = self._bcast((dxhat * xhat).sum(axis=axes), nd)
        dx = self._bcast(inv, nd) / m * (m * dxhat - s1 - xhat * s2)
        return dx, {"gamma": dgamma, "beta": dbeta}

    def batch_stats(self, cache):
        _, _, mu, var, m = cache
        return mu, var


class ReLU(Layer):
    def forward(self, p, x, train, rng):
        return np.maximum(x, 0.0), x

    def backward(self, p, x, dout):
        return dout * (x > 0), {}


class LeakyReLU(Layer):
    def __init__(self, spec):
        super().__init__(spec)
        self.slope = float(spec.get("slope", 0.2))

    def forward(self, p, x, train, rng):
        return np.where(x > 0, x, self.slope * x), x

    def backward(self, p, x, dout):
        return dout * np.where(x > 0, 1.0, self.slope), {}


class Tanh(Layer):
    def forward(self, p, x, train, rng):
        y = np.tanh(x)
        return y, y

    def backward(self, p, y, dout):
        return dout * (1.0 - y * y), {}


class Sigmoid(Layer):
    def forward(self, p, x, train, rng):
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        return y, y

    def backward(self, p, y, dout):
        return dout * y * (1.0 - y), {}


class Dropout(Layer):
    def __init__(self, spec):
        super().__init__(spec)
        self.rate = float(spec.get("rate", 0.3))

    def forward(self, p, x, train, rng):
        if not train or self.rate == 0.0:
            return x, None
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, p, mask, dout):
        return (dout if mask is None else dout * mask), {}


class ConcatGrouped(Layer):
    """Merge per-channel stacks ``(C, m, H, W)`` into ``(C*m, H, W)``."""

    def out_shape(self, in_shape):
        if len(in_shape) != 4:
            raise ShapeError(f"concat_grouped expects (C, m, H, W), got {in_shape}")
        c, m, h, w = in_shape
        return (c * m, h, w)

    def forward(self, p, x, train, rng):
        n, c, m, h, w = x.shape
        return x.reshape(n, c * m, h, w), x.shape

    def backward(self, p, shape, dout):
        return dout.reshape(shape), {}


class Flatten(Layer):
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, p, x, train, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, p, shape, dout):
        return dout.reshape(shape), {}


KINDS = {
    "conv2d": Conv,
    "conv2d_transpose": Conv,
    "dense": Dense,
    "batchnorm": BatchNorm,
    "relu": ReLU,
    "leaky_relu": LeakyReLU,
    "tanh": Tanh,
    "sigmoid": Sigmoid,
    "dropout": Dropout,
    "concat_grouped": ConcatGrouped,
    "flatten": Flatten,
}


def build(spec) -> Layer:
    try:
        return KINDS[spec.kind](spec)
    except KeyError:
        raise ValueError(f"unknown layer kind {spec.kind!r}") from None

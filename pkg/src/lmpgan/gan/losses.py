"""Generator and discriminator losses with their gradients.

Frame-valued losses take arrays whose last two axes are the grid; every
other axis is summed over, so a batch ``(B, 1, M, N)`` yields the batch sum.
"""
from __future__ import annotations

import numpy as np

EPS = 1e-7


def _check(yhat, y):
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.shape != y.shape:
        raise ValueError(f"shape mismatch: {yhat.shape} vs {y.shape}")
    return yhat, y


def bce(k, s):
    """Binary cross-entropy of prediction ``k`` against label ``s`` (elementwise)."""
    k = np.clip(np.asarray(k, dtype=np.float64), EPS, 1.0 - EPS)
    out = -(s * np.log(k) + (1.0 - s) * np.log(1.0 - k))
    return float(out) if out.ndim == 0 else out


def bce_grad(k, s):
    k = np.asarray(k, dtype=np.float64)
    kc = np.clip(k, EPS, 1.0 - EPS)
    g = -(s / kc) + (1.0 - s) / (1.0 - kc)
    return np.where((k > EPS) & (k < 1.0 - EPS), g, 0.0)


def loss_d(d_real, d_fake) -> float:
    return float(np.sum(bce(d_real, 1.0)) + np.sum(bce(d_fake, 0.0)))


def loss_lp(yhat, y, p=2) -> float:
    yhat, y = _check(yhat, y)
    return float(np.sum(np.abs(yhat - y) ** p))


def loss_lp_grad(yhat, y, p=2):
    yhat, y = _check(yhat, y)
    d = yhat - y
    return 2.0 * d if p == 2 else np.sign(d)


def _diffs(a):
    # vertical (i vs i-1) and horizontal (j-1 vs j) neighbour differences
    return a[..., 1:, :] - a[..., :-1, :], a[..., :, :-1] - a[..., :, 1:]


def loss_gdl(yhat, y, alpha=1) -> float:
    yhat, y = _check(yhat, y)
    total = 0.0
    for dy, dh in zip(_diffs(y), _diffs(yhat)):
        total += float(np.sum(np.abs(np.abs(dy) - np.abs(dh)) ** alpha))
    return total


def loss_gdl_grad(yhat, y, alpha=1):
    yhat, y = _check(yhat, y)
    g = np.zeros_like(yhat)
    (vy, hy), (vh, hh) = _diffs(y), _diffs(yhat)
    for dy, dh, vert in ((vy, vh, True), (hy, hh, False)):
        u = np.abs(dy) - np.abs(dh)
        if alpha == 1:
            du = np.sign(u)
        else:
            du = alpha * np.abs(u) ** (alpha - 1) * np.sign(u)
        dd = -du * np.sign(dh)
        if vert:
            g[..., 1:, :] += dd
            g[..., :-1, :] -= dd
        else:
            g[..., :, :-1] += dd
            g[..., :, 1:] -= dd
    return g


def loss_dcl(yhat, y, x_last) -> float:
    """Count of mispredicted change directions; each pixel adds 0, 1 or 2."""
    yhat, y = _check(yhat, y)
    x_last = np.asarray(x_last, dtype=np.float64)
    if x_last.shape != y.shape:
        raise ValueError(f"shape mismatch: {x_last.shape} vs {y.shape}")
    return float(np.sum(np.abs(np.sign(yhat - x_last) - np.sign(y - x_last))))


def loss_dcl_grad(yhat, y, x_last):
    # piecewise constant: zero almost everywhere
    return np.zeros_like(np.asarray(yhat, dtype=np.float64))


def weighted_g(adv, lp, gdl, dcl, config) -> float:
    return (config.lambda_adv * adv + config.lambda_lp * lp
            + config.lambda_gdl * gdl + config.lambda_dcl * dcl)


def loss_g(x_last, y, yhat, d_fake, config) -> float:
    """Weighted generator objective for one sample or a batch (summed)."""
    return weighted_g(
        float(np.sum(bce(d_fake, 1.0))),
        loss_lp(yhat, y, config.p),
        loss_gdl(yhat, y, config.alpha),
        loss_dcl(yhat, y, x_last),
        config,
    )

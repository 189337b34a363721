"""Channel-first 3D layer kernels and their adjoints (single instance, no batch axis)."""
from __future__ import annotations

import numpy as np

IN_EPS = 1e-5
KSIZE = 3


def _out_dims(dims, stride):
    return tuple(-(-n // stride) for n in dims)


def im2col(x: np.ndarray, stride: int = 1) -> np.ndarray:
    """Rows ``(ci, a, b, c)`` of 3x3x3 neighbourhoods (zero padded) per output voxel."""
    ci, n1, n2, n3 = x.shape
    m1, m2, m3 = _out_dims((n1, n2, n3), stride)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    cols = np.empty((ci, KSIZE, KSIZE, KSIZE, m1, m2, m3))
    s = stride
    for a in range(KSIZE):
        for b in range(KSIZE):
            for c in range(KSIZE):
                cols[:, a, b, c] = xp[:, a : a + s * m1 : s, b : b + s * m2 : s, c : c + s * m3 : s]
    return cols.reshape(ci * KSIZE**3, -1)


def col2im(cols: np.ndarray, in_shape, stride: int = 1) -> np.ndarray:
    ci, n1, n2, n3 = in_shape
    m1, m2, m3 = _out_dims((n1, n2, n3), stride)
    cols = cols.reshape(ci, KSIZE, KSIZE, KSIZE, m1, m2, m3)
    xp = np.zeros((ci, n1 + 2, n2 + 2, n3 + 2))
    s = stride
    for a in range(KSIZE):
        for b in range(KSIZE):
            for c in range(KSIZE):
                xp[:, a : a + s * m1 : s, b : b + s * m2 : s, c : c + s * m3 : s] += cols[:, a, b, c]
    return xp[:, 1:-1, 1:-1, 1:-1]


def conv3d(x, weight, bias=None, stride: int = 1, cols=None) -> np.ndarray:
    """3x3x3 convolution with zero padding 1; ``cols`` reuses a precomputed im2col."""
    co = weight.shape[0]
    out_dims = _out_dims(x.shape[1:], stride)
    if cols is None:
        cols = im2col(x, stride)
    y = weight.reshape(co, -1) @ cols
    if bias is not None:
        y += bias[:, None]
    return y.reshape(co, *out_dims)


def conv3d_backward(x, weight, g, stride: int = 1, with_bias: bool = False, need_grad_x: bool = True, cols=None):
    """Returns ``(grad_x, grad_weight, grad_bias)``; unrequested parts are None."""
    co = weight.shape[0]
    g2 = g.reshape(co, -1)
    if cols is None:
        cols = im2col(x, stride)
    gw = (g2 @ cols.T).reshape(weight.shape)
    gx = col2im(weight.reshape(co, -1).T @ g2, x.shape, stride) if need_grad_x else None
    gb = g2.sum(axis=1) if with_bias else None
    return gx, gw, gb


def instance_norm(x, gamma, beta, eps: float = IN_EPS):
    """Per-channel standardisation over all voxels with a learnable affine.

    Returns the output and the cache needed by the backward pass.
    """
    flat = x.reshape(x.shape[0], -1)
    mu = flat.mean(axis=1, keepdims=True)
    var = flat.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (flat - mu) * inv_std
    y = gamma[:, None] * xhat + beta[:, None]
    return y.reshape(x.shape), (xhat, inv_std)


def instance_norm_backward(g, gamma, cache):
    xhat, inv_std = cache
    g2 = g.reshape(g.shape[0], -1)
    gbeta = g2.sum(axis=1)
    ggamma = (g2 * xhat).sum(axis=1)
    gx = gamma[:, None] * inv_std * (g2 - g2.mean(axis=1, keepdims=True) - xhat * (g2 * xhat).mean(axis=1, keepdims=True))
    return gx.reshape(g.shape), ggamma, gbeta


def prelu(x, slope):
    return np.where(x > 0, x, slope[:, None, None, None] * x)


def prelu_backward(x, slope, g):
    pos = x > 0
    gx = np.where(pos, g, slope[:, None, None, None] * g)
    gslope = np.where(pos, 0.0, g * x).reshape(x.shape[0], -1).sum(axis=1)
    return gx, gslope


def nn_upsample2x(x):
    return x.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3)


def nn_upsample2x_backward(g):
    c, n1, n2, n3 = g.shape
    return g.reshape(c, n1 // 2, 2, n2 // 2, 2, n3 // 2, 2).sum(axis=(2, 4, 6))

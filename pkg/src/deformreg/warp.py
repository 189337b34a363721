"""Resampling a moving volume at x + d(x).

Corners that fall outside the grid contribute zero (zero padding). Where a
sampling coordinate is an exact integer the weight ``1 - |t|`` has a kink; the
derivative used is the right-derivative, which is what the floor-based corner
split below produces.
"""
from __future__ import annotations

import itertools

import numpy as np

from .volume import as_array, is_label

_CORNERS = list(itertools.product((0, 1), repeat=3))


def _check_dims(m: np.ndarray, d: np.ndarray):
    if d.ndim != 4 or d.shape[0] != 3 or m.shape != d.shape[1:]:
        raise ValueError(f"dims mismatch: volume {m.shape} vs displacement field {d.shape[1:]}")


def identity_grid(dims) -> np.ndarray:
    return np.stack(np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij"))


class _Stencil:
    """Corner indices and per-axis weights of the trilinear stencil at x + d(x)."""

    def __init__(self, dims, d: np.ndarray):
        self.dims = dims
        phi = identity_grid(dims) + d
        base = np.floor(phi)
        self.t = phi - base
        self.base = base.astype(np.int64)

    def corners(self):
        dims = self.dims
        strides = (dims[1] * dims[2], dims[2], 1)
        for offs in _CORNERS:
            valid = np.ones(dims, dtype=bool)
            flat = np.zeros(dims, dtype=np.int64)
            weights = []
            slopes = []
            for ax, o in enumerate(offs):
                idx = self.base[ax] + o
                valid &= (idx >= 0) & (idx < dims[ax])
                flat += np.clip(idx, 0, dims[ax] - 1) * strides[ax]
                t = self.t[ax]
                weights.append(t if o else 1.0 - t)
                slopes.append(1.0 if o else -1.0)
            yield flat, valid, weights, slopes


def warp_trilinear(m, d) -> np.ndarray:
    """Sample ``m`` at x + d(x) with trilinear weights and zero padding."""
    if is_label(m):
        raise ValueError("warp_trilinear expects an intensity volume; raw label values need warp_labels_trilinear")
    return _warp(as_array(m), as_array(d))


def warp_labels_trilinear(labels, d) -> np.ndarray:
    """Trilinear warp of raw label values, used by the segmentation loss during training."""
    return _warp(as_array(labels), as_array(d))


def _warp(m: np.ndarray, d: np.ndarray) -> np.ndarray:
    _check_dims(m, d)
    st = _Stencil(m.shape, d)
    mflat = m.ravel()
    out = np.zeros(m.shape)
    for flat, valid, w, _ in st.corners():
        out += np.where(valid, mflat[flat], 0.0) * (w[0] * w[1] * w[2])
    return out


def warp_backward(m, d, upstream, need_grad_m: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Adjoints of :func:`warp_trilinear`.

    Returns ``(grad_d, grad_m)`` for a scalar objective whose gradient with
    respect to the warped output is ``upstream``. ``grad_m`` is None when
    ``need_grad_m`` is false.
    """
    m = as_array(m)
    d = as_array(d)
    g = as_array(upstream)
    _check_dims(m, d)
    if g.shape != m.shape:
        raise ValueError(f"dims mismatch: upstream {g.shape} vs volume {m.shape}")
    st = _Stencil(m.shape, d)
    mflat = m.ravel()
    grad_d = np.zeros_like(d)
    grad_m = np.zeros(m.size) if need_grad_m else None
    for flat, valid, w, s in st.corners():
        if need_grad_m:
            weight = w[0] * w[1] * w[2]
            # bincount sums in index order, so accumulation is deterministic
            grad_m += np.bincount(flat[valid], weights=(g * weight)[valid], minlength=m.size)
        gv = np.where(valid, mflat[flat], 0.0) * g
        grad_d[0] += gv * (s[0] * w[1] * w[2])
        grad_d[1] += gv * (w[0] * s[1] * w[2])
        grad_d[2] += gv * (w[0] * w[1] * s[2])
    return grad_d, (grad_m.reshape(m.shape) if need_grad_m else None)


def warp_nearest(labels, d) -> np.ndarray:
    """Nearest-neighbour warp for label maps; ties round half-up, outside -> 0."""
    lab = as_array(labels)
    d = as_array(d)
    _check_dims(lab, d)
    dims = lab.shape
    idx = np.floor(identity_grid(dims) + d + 0.5).astype(np.int64)
    valid = np.ones(dims, dtype=bool)
    for ax in range(3):
        valid &= (idx[ax] >= 0) & (idx[ax] < dims[ax])
        idx[ax] = np.clip(idx[ax], 0, dims[ax] - 1)
    return np.where(valid, lab[idx[0], idx[1], idx[2]], 0.0)

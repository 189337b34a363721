"""Similarity, regulariser and segmentation losses with analytic gradients."""
from __future__ import annotations

import itertools
from typing import Optional

import numpy as np

from .config import LossWeights
from .volume import as_array, downsample2x, upsample_trilinear
from .warp import warp_labels_trilinear, warp_trilinear

LNCC_EPS = 1e-5

# every non-zero shift in {0,1}^3; the zero shift contributes nothing
SHIFTS = [k for k in itertools.product((0, 1), repeat=3) if any(k)]


def box_sum(a: np.ndarray, r: int) -> np.ndarray:
    """Sum over the cube of half-width ``r`` around each voxel, clipped at the borders.

    Self-adjoint, so the same call maps gradients back.
    """
    out = np.asarray(a, dtype=np.float64)
    for ax in range(out.ndim - 3, out.ndim):
        pad = [(0, 0)] * out.ndim
        pad[ax] = (r + 1, r)
        c = np.cumsum(np.pad(out, pad), axis=ax)
        n = out.shape[ax]
        hi = [slice(None)] * out.ndim
        lo = [slice(None)] * out.ndim
        hi[ax] = slice(2 * r + 1, 2 * r + 1 + n)
        lo[ax] = slice(0, n)
        out = c[tuple(hi)] - c[tuple(lo)]
    return out


def _check_window(n: int):
    if n < 1 or n % 2 == 0:
        raise ValueError(f"LNCC window size must be odd, got {n}")


class _LnccStats:
    def __init__(self, f, w, n, eps):
        f = as_array(f)
        w = as_array(w)
        if f.shape != w.shape:
            raise ValueError(f"dims mismatch: {f.shape} vs {w.shape}")
        _check_window(n)
        r = n // 2
        self.r = r
        # global centring does not change LNCC but limits cancellation in the sums
        self.f = f - f.mean()
        self.w = w - w.mean()
        self.count = box_sum(np.ones(f.shape), r)
        sf = box_sum(self.f, r)
        sw = box_sum(self.w, r)
        self.fbar = sf / self.count
        self.wbar = sw / self.count
        self.cross = box_sum(self.f * self.w, r) - sf * self.wbar
        self.var_f = box_sum(self.f * self.f, r) - sf * self.fbar
        self.var_w = box_sum(self.w * self.w, r) - sw * self.wbar
        self.den = self.var_f * self.var_w + eps
        self.cc = self.cross**2 / self.den


def _scale(reduction: str, size: int) -> float:
    if reduction == "mean":
        return 1.0 / size
    if reduction == "sum":
        return 1.0
    raise ValueError(f"unknown reduction {reduction!r}")


def lncc(f, w, n: int = 9, reduction: str = "mean", eps: float = LNCC_EPS) -> float:
    """Squared local correlation of ``f`` and ``w`` in n^3 windows.

    Averaged over window centres by default (``reduction="sum"`` gives the raw
    sum). Border windows are clipped and use their in-bounds voxel count.
    """
    st = _LnccStats(f, w, n, eps)
    return float(st.cc.sum() * _scale(reduction, st.cc.size))


def lncc_backward(f, w, n: int = 9, upstream: float = 1.0, reduction: str = "mean", eps: float = LNCC_EPS) -> np.ndarray:
    """Gradient of ``upstream * lncc(f, w)`` with respect to ``w``."""
    st = _LnccStats(f, w, n, eps)
    s = upstream * _scale(reduction, st.cc.size)
    g_cross = s * 2.0 * st.cross / st.den
    g_var = -s * st.cross**2 * st.var_f / st.den**2
    r = st.r
    return (
        st.f * box_sum(g_cross, r)
        - box_sum(g_cross * st.fbar, r)
        + 2.0 * st.w * box_sum(g_var, r)
        - 2.0 * box_sum(g_var * st.wbar, r)
    )


def _shift_pairs(dims, k):
    a = tuple(slice(0, n - o) for n, o in zip(dims, k))
    b = tuple(slice(o, n) for n, o in zip(dims, k))
    return a, b


def smoothness(d) -> float:
    """Sum over the 7 unit shifts of ||d(x) - d(x + k)||^2 where x + k is in bounds."""
    d = as_array(d)
    dims = d.shape[1:]
    total = 0.0
    for k in SHIFTS:
        a, b = _shift_pairs(dims, k)
        diff = d[(slice(None), *a)] - d[(slice(None), *b)]
        total += float(np.sum(diff * diff))
    return total


def smoothness_backward(d, upstream: float = 1.0) -> np.ndarray:
    d = as_array(d)
    dims = d.shape[1:]
    grad = np.zeros_like(d)
    for k in SHIFTS:
        a, b = _shift_pairs(dims, k)
        a = (slice(None), *a)
        b = (slice(None), *b)
        diff = 2.0 * upstream * (d[a] - d[b])
        grad[a] += diff
        grad[b] -= diff
    return grad


def _seg_terms(lf, wl, c1, c2):
    if c2 <= 0:
        raise ValueError("c2 must be positive")
    lf = as_array(lf)
    wl = as_array(wl)
    if lf.shape != wl.shape:
        raise ValueError(f"dims mismatch: {lf.shape} vs {wl.shape}")
    diff = wl - lf
    mismatch = float(np.abs(diff).sum())
    den = float(np.abs(lf).sum()) + float(np.abs(wl).sum()) + c1 * mismatch + c2
    return lf, wl, diff, mismatch, den


def seg_loss(lf, warped_lm, c1: float = 10.0, c2: float = 1e-9) -> float:
    """Label mismatch on raw label values, no per-class expansion.

    (c1 + 1) |L_F - L_W|_1 / (|L_F|_1 + |L_W|_1 + c1 |L_F - L_W|_1 + c2)
    """
    _, _, _, mismatch, den = _seg_terms(lf, warped_lm, c1, c2)
    return (c1 + 1.0) * mismatch / den


def seg_loss_backward(lf, warped_lm, c1: float = 10.0, c2: float = 1e-9, upstream: float = 1.0) -> np.ndarray:
    """Gradient with respect to the warped label volume; |.| has subgradient 0 at 0."""
    _, wl, diff, mismatch, den = _seg_terms(lf, warped_lm, c1, c2)
    a = upstream * (c1 + 1.0) / den
    b = upstream * (c1 + 1.0) * mismatch / den**2
    # in-place to keep the buffer count independent of everything but the grid
    grad = np.sign(diff)
    grad *= a - b * c1
    grad -= b * np.sign(wl)
    return grad


def lambda_schedule(i, initial: float = 0.5, period: float = 1000.0) -> float:
    """Low-resolution loss weight initial^(1 + i/period); decays towards 0, never reaches it."""
    if i < 0:
        raise ValueError("iteration index must be >= 0")
    return float(initial ** (1.0 + i / period))


def _check_labels(labels_f, labels_m):
    if (labels_f is None) != (labels_m is None):
        raise ValueError("labels must be provided for both images or neither")


def loss_hr(f, m, d_hr, labels_f=None, labels_m=None, weights: Optional[LossWeights] = None) -> float:
    """-LNCC(F, M o phi) + alpha1 R(d) [+ alpha2 SL(L_F, L_M o phi)]."""
    weights = weights or LossWeights()
    _check_labels(labels_f, labels_m)
    warped = warp_trilinear(m, d_hr)
    value = -lncc(f, warped, weights.window_n, weights.lncc_reduction)
    value += weights.alpha1 * smoothness(d_hr)
    if labels_f is not None and weights.alpha2 > 0:
        wl = warp_labels_trilinear(labels_m, d_hr)
        value += weights.alpha2 * seg_loss(labels_f, wl, weights.c1, weights.c2)
    return value


def loss_lr(f_hr, m_lr, d_lr, weights: Optional[LossWeights] = None) -> float:
    """-LNCC(F_HR, upsample(M_LR o phi_LR)) + alpha3 R(d_LR)."""
    weights = weights or LossWeights()
    m_lr = as_array(m_lr)
    d_lr = as_array(d_lr)
    f_hr = as_array(f_hr)
    if m_lr.shape != d_lr.shape[1:]:
        raise ValueError(f"dims mismatch: LR moving {m_lr.shape} vs LR field {d_lr.shape[1:]}")
    up = upsample_trilinear(warp_trilinear(m_lr, d_lr), f_hr.shape)
    return -lncc(f_hr, up, weights.window_n, weights.lncc_reduction) + weights.alpha3 * smoothness(d_lr)


def overall_loss(l_hr: float, l_lr: float, i, deep_supervision: bool = True, initial: float = 0.5, period: float = 1000.0) -> float:
    if not deep_supervision:
        return l_hr
    lam = lambda_schedule(i, initial, period)
    return (1.0 - lam) * l_hr + lam * l_lr


def downsample_levels(v, levels: int) -> np.ndarray:
    out = as_array(v)
    for _ in range(levels):
        out = downsample2x(out)
    return out

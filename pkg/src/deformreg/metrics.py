"""Evaluation measures: Dice overlap, global NCC and global SSIM."""
from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from .volume import as_array


def dice_binary(a, b) -> float:
    """2|A and B| / (|A| + |B|); two empty masks count as perfect agreement."""
    a = as_array(a)
    b = as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"dims mismatch: {a.shape} vs {b.shape}")
    for x in (a, b):
        if not np.all((x == 0) | (x == 1)):
            raise ValueError("dice_binary expects binary masks")
    size = a.sum() + b.sum()
    if size == 0:
        return 1.0
    return float(2.0 * np.sum(a * b) / size)


def dice_multilabel(lf, lw, labels: Optional[Iterable[int]] = None) -> tuple[dict, float]:
    """Per-label Dice and their unweighted mean.

    By default every non-zero label present in ``lf`` is scored.
    """
    lf = as_array(lf)
    lw = as_array(lw)
    if lf.shape != lw.shape:
        raise ValueError(f"dims mismatch: {lf.shape} vs {lw.shape}")
    if labels is None:
        labels = [int(v) for v in np.unique(lf) if v != 0]
    scores = {}
    for lab in labels:
        a = lf == lab
        b = lw == lab
        size = a.sum() + b.sum()
        scores[int(lab)] = 1.0 if size == 0 else float(2.0 * np.sum(a & b) / size)
    mean = float(np.mean(list(scores.values()))) if scores else float("nan")
    return scores, mean


def ncc(f, w) -> float:
    """Global normalised cross-correlation in [-1, 1]."""
    f = as_array(f)
    w = as_array(w)
    if f.shape != w.shape:
        raise ValueError(f"dims mismatch: {f.shape} vs {w.shape}")
    fc = f - f.mean()
    wc = w - w.mean()
    sff = np.sum(fc * fc)
    sww = np.sum(wc * wc)
    if sff == 0 or sww == 0:
        raise ValueError("NCC is undefined for a constant image")
    return float(np.sum(fc * wc) / np.sqrt(sff * sww))


def ssim(a, b, dynamic_range: float) -> float:
    """Single-window SSIM over the whole volume, constants (0.01 L)^2 and (0.03 L)^2."""
    if dynamic_range <= 0:
        raise ValueError("dynamic range must be positive")
    a = as_array(a)
    b = as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"dims mismatch: {a.shape} vs {b.shape}")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    mu_a = a.mean()
    mu_b = b.mean()
    var_a = np.mean((a - mu_a) ** 2)
    var_b = np.mean((b - mu_b) ** 2)
    cov = np.mean((a - mu_a) * (b - mu_b))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(num / den)

"""Synthetic phantoms and smooth deformations with known ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .warp import identity_grid, warp_nearest, warp_trilinear

MARGIN = 2
TAPER = 4
MAX_PLACEMENT_TRIES = 200
TEXTURE = 0.2


def _rng(seed, stream: int):
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def _taper(dims) -> np.ndarray:
    """0 on the outer MARGIN voxels, raised-cosine ramp to 1 over the next TAPER voxels."""
    out = np.ones(dims)
    for ax, n in enumerate(dims):
        dist = np.minimum(np.arange(n), n - 1 - np.arange(n)).astype(float)
        ramp = np.clip((dist - MARGIN + 1) / (TAPER + 1), 0.0, 1.0)
        ramp = 0.5 - 0.5 * np.cos(np.pi * ramp)
        ramp[dist < MARGIN] = 0.0
        shape = [1, 1, 1]
        shape[ax] = n
        out = out * ramp.reshape(shape)
    return out


def random_smooth_dvf(dims, amplitude: float, smooth_sigma: float, seed: int = 0) -> np.ndarray:
    """Gaussian-smoothed white noise, tapered at the border, max |component| = amplitude."""
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    if smooth_sigma <= 0:
        raise ValueError("smooth_sigma must be > 0")
    dims = tuple(int(n) for n in dims)
    if amplitude == 0:
        return np.zeros((3, *dims))
    rng = _rng(seed, 1)
    noise = rng.standard_normal((3, *dims))
    d = np.stack([gaussian_filter(c, smooth_sigma, truncate=3.0, mode="reflect") for c in noise])
    d *= _taper(dims)
    peak = np.abs(d).max()
    if peak == 0:
        return np.zeros((3, *dims))
    return d * (amplitude / peak)


@dataclass
class Blob:
    center: np.ndarray
    radii: np.ndarray
    intensity: float


def _place_blobs(dims, n_blobs, rng):
    dims_a = np.asarray(dims, dtype=float)
    lo = np.full(3, 0.18) * dims_a
    hi = np.full(3, 0.82) * dims_a - 1
    r_lo = np.maximum(2.5, 0.12 * dims_a)
    r_hi = np.maximum(3.0, 0.24 * dims_a)
    intensities = np.linspace(0.45, 1.0, n_blobs)
    rng.shuffle(intensities)
    return [
        Blob(rng.uniform(lo, hi), rng.uniform(r_lo, r_hi), float(intensities[j])) for j in range(n_blobs)
    ]


def make_phantom(dims, n_blobs: int = 6, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Soft-edged ellipsoids over a smooth textured background.

    Returns ``(image, labels)``; label j in 1..n_blobs marks voxels inside blob j
    (overlaps go to the nearest blob in normalised radius), 0 is background.
    """
    dims = tuple(int(n) for n in dims)
    if min(dims) < 16:
        raise ValueError(f"phantom dims must be >= 16 per axis, got {dims}")
    if n_blobs < 1:
        raise ValueError("n_blobs must be >= 1")
    rng = _rng(seed, 0)
    grid = identity_grid(dims)
    for _ in range(MAX_PLACEMENT_TRIES):
        blobs = _place_blobs(dims, n_blobs, rng)
        rho = np.stack(
            [np.sqrt(sum(((grid[a] - b.center[a]) / b.radii[a]) ** 2 for a in range(3))) for b in blobs]
        )
        nearest = np.argmin(rho, axis=0)
        rho_min = np.min(rho, axis=0)
        labels = np.where(rho_min <= 1.0, nearest + 1, 0).astype(np.float64)
        if all(np.any(labels == j) for j in range(1, n_blobs + 1)):
            break
    else:
        raise RuntimeError(f"could not place {n_blobs} non-empty blobs in {dims} after {MAX_PLACEMENT_TRIES} tries")
    background = gaussian_filter(rng.standard_normal(dims), 4.0, mode="reflect")
    background = 0.1 + 0.15 * (background - background.min()) / np.ptp(background)
    texture = gaussian_filter(rng.standard_normal(dims), 1.5, mode="reflect")
    texture /= np.abs(texture).max()
    soft = 1.0 / (1.0 + np.exp(-(1.0 - rho_min) / 0.08))
    inten = np.array([b.intensity for b in blobs])[nearest]
    image = background * (1.0 - soft) + inten * soft + TEXTURE * texture
    return image, labels


def make_pair(dims, amplitude: float = 3.0, smooth_sigma: float = 4.0, seed: int = 0, n_blobs: int = 6):
    """Fixed/moving pair ``(F, M, d_true, L_F, L_M)`` with M = F warped by d_true.

    Registering M back onto F (finding d with M o (x + d) ~ F) is the task; d_true
    itself is the forward field, not the answer.
    """
    image, labels = make_phantom(dims, n_blobs, seed)
    d_true = random_smooth_dvf(dims, amplitude, smooth_sigma, seed)
    moving = warp_trilinear(image, d_true)
    labels_m = warp_nearest(labels, d_true)
    return image, moving, d_true, labels, labels_m

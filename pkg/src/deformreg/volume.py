"""Grid containers, resolution changes and image pyramids.

Numerical routines work on plain ndarrays: a scalar volume is a ``(nu, nv, nw)``
array and a displacement field is a ``(3, nu, nv, nw)`` array of voxel-unit
offsets. :class:`Volume` and :class:`DisplacementField` wrap those arrays with
validation and are accepted anywhere an array is.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

INTENSITY = "intensity"
LABEL = "label"
KINDS = (INTENSITY, LABEL)


@dataclass(frozen=True)
class Volume:
    data: np.ndarray
    kind: str = INTENSITY

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown volume kind {self.kind!r}")
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3D grid, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        if self.kind == LABEL and (np.any(data < 0) or np.any(data != np.round(data))):
            raise ValueError("label volumes must hold non-negative integers")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    @classmethod
    def labels(cls, data) -> "Volume":
        return cls(np.asarray(data), LABEL)


@dataclass(frozen=True)
class DisplacementField:
    """Per-voxel offsets d(x) in voxel units; the deformation is x + d(x)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[0] != 3:
            raise ValueError(f"displacement field must have shape (3, nu, nv, nw), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("displacement field contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])

    @classmethod
    def zeros(cls, dims) -> "DisplacementField":
        return cls(np.zeros((3, *dims)))


@dataclass
class Pyramid:
    levels: list = field(default_factory=list)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    @property
    def dims(self) -> list[tuple[int, int, int]]:
        return [tuple(np.shape(lv)[-3:]) for lv in self.levels]


ArrayLike = Union[np.ndarray, Volume, DisplacementField]


def as_array(v: ArrayLike) -> np.ndarray:
    """Unwrap a container to a float64 array (no copy for plain float64 arrays)."""
    if isinstance(v, (Volume, DisplacementField)):
        return v.data
    return np.asarray(v, dtype=np.float64)


def is_label(v) -> bool:
    return isinstance(v, Volume) and v.kind == LABEL


def half_dims(dims: Sequence[int]) -> tuple[int, ...]:
    return tuple(-(-int(n) // 2) for n in dims)


def downsample2x(v: ArrayLike) -> np.ndarray:
    """2x mean pooling; odd trailing cells average over the voxels that exist.

    Works on a scalar volume or channel-first stack ``(..., nu, nv, nw)``.
    """
    if is_label(v):
        raise ValueError("label volumes cannot be averaged; use nearest-neighbour resampling")
    a = as_array(v)
    lead = a.shape[:-3]
    dims = a.shape[-3:]
    out_dims = half_dims(dims)
    padded = np.zeros((*lead, *(2 * n for n in out_dims)))
    count = np.zeros(tuple(2 * n for n in out_dims))
    padded[(..., *(slice(0, n) for n in dims))] = a
    count[tuple(slice(0, n) for n in dims)] = 1.0

    def pool(x):
        shape = x.shape[:-3]
        for n in out_dims:
            shape = shape + (n, 2)
        return x.reshape(shape).sum(axis=(-5, -3, -1))

    return pool(padded) / pool(count)


def interp_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Dense 1D linear interpolation operator, align-corners convention.

    Destination index j samples source coordinate j * (n_src - 1) / (n_dst - 1).
    """
    if n_dst == 1 or n_src == 1:
        pos = np.zeros(n_dst)
    else:
        pos = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))
    lo = np.minimum(np.floor(pos).astype(int), n_src - 1)
    hi = np.minimum(lo + 1, n_src - 1)
    t = pos - lo
    mat = np.zeros((n_dst, n_src))
    rows = np.arange(n_dst)
    np.add.at(mat, (rows, lo), 1.0 - t)
    np.add.at(mat, (rows, hi), t)
    return mat


def _apply_separable(a: np.ndarray, mats) -> np.ndarray:
    # mats act on the last three axes
    out = np.einsum("...ijk,ai->...ajk", a, mats[0])
    out = np.einsum("...ajk,bj->...abk", out, mats[1])
    return np.einsum("...abk,ck->...abc", out, mats[2])


def upsample_trilinear(v: ArrayLike, target_dims: Sequence[int]) -> np.ndarray:
    """Trilinear resampling onto a finer grid (align-corners).

    Accepts a scalar volume or a channel-first stack such as a displacement
    field; offsets are *not* rescaled here.
    """
    if is_label(v):
        raise ValueError("label volumes cannot be interpolated trilinearly")
    a = as_array(v)
    dims = a.shape[-3:]
    target_dims = tuple(int(n) for n in target_dims)
    if len(target_dims) != 3 or any(t < s for t, s in zip(target_dims, dims)):
        raise ValueError(f"target dims {target_dims} must be >= source dims {dims} per axis")
    mats = [interp_matrix(s, t) for s, t in zip(dims, target_dims)]
    return _apply_separable(a, mats)


def upsample_trilinear_adjoint(g: np.ndarray, source_dims: Sequence[int]) -> np.ndarray:
    """Transpose of :func:`upsample_trilinear` applied to a fine-grid gradient."""
    g = np.asarray(g, dtype=np.float64)
    dims = g.shape[-3:]
    mats = [interp_matrix(int(s), t).T for s, t in zip(source_dims, dims)]
    return _apply_separable(g, mats)


def build_pyramid(v: ArrayLike, levels: int) -> Pyramid:
    """Level 0 is ``v``; each further level is :func:`downsample2x` of the previous."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    dims = tuple(np.shape(as_array(v))[-3:])
    all_dims = [dims]
    for _ in range(levels - 1):
        all_dims.append(half_dims(all_dims[-1]))
    if min(min(d) for d in all_dims) < 2:
        raise ValueError(f"{levels} levels too many for dims {dims}: level dims would be {all_dims}")
    out = [as_array(v)]
    for _ in range(levels - 1):
        out.append(downsample2x(out[-1]))
    return Pyramid(out)

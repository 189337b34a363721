"""Seeded finite-difference checks of every analytic gradient in the package.

Each check builds a small random instance, evaluates the gradient through the
tape and compares it with central differences via :func:`tape.grad_check`.
Coordinates where a displacement sits within ``KINK_MARGIN`` of a grid point
are skipped, since trilinear interpolation has a slope jump there.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import losses
from . import tape as T
from .config import ArchConfig, LossWeights
from .network import build_graph, init_params, param_nodes
from .warp import warp_trilinear

STEP = 1e-4
TOL = 1e-4
NETWORK_TOL = 1e-3
KINK_MARGIN = 1e-3
CHECK_WEIGHTS = LossWeights(alpha1=0.01, alpha2=0.2, alpha3=0.08, window_n=3)
TINY_ARCH = ArchConfig(c=2, k=1, depth=1)


def _near_grid(d):
    return np.abs(d - np.round(d)) <= KINK_MARGIN


def _dims(rng):
    return tuple(int(n) for n in rng.integers(6, 11, size=3))


def _field(rng, dims, scale=1.5):
    return rng.uniform(-scale, scale, size=(3, *dims))


def check_warp(seed: int) -> T.GradCheckReport:
    rng = np.random.default_rng([seed, 1])
    dims = _dims(rng)
    m = rng.normal(size=dims)
    up = rng.normal(size=dims)
    d = _field(rng, dims)

    tp = T.Tape()
    dn = tp.variable(d)
    grad = tp.backward(T.dot(T.warp(m, dn), tp.constant(up)))[dn]
    fn = lambda x: float(np.sum(up * warp_trilinear(m, x.reshape(d.shape))))
    return T.grad_check(fn, grad, d, STEP, TOL, n_coords=256, seed=seed, exclude=_near_grid(d))


def check_lncc(seed: int) -> T.GradCheckReport:
    rng = np.random.default_rng([seed, 2])
    dims = _dims(rng)
    f = rng.normal(size=dims)
    w = rng.normal(size=dims) + 0.5 * f
    tp = T.Tape()
    wn = tp.variable(w)
    grad = tp.backward(T.lncc(f, wn, 3))[wn]
    fn = lambda x: losses.lncc(f, x.reshape(dims), 3)
    return T.grad_check(fn, grad, w, STEP, TOL, n_coords=256, seed=seed)


def check_smoothness(seed: int) -> T.GradCheckReport:
    rng = np.random.default_rng([seed, 3])
    d = _field(rng, _dims(rng))
    tp = T.Tape()
    dn = tp.variable(d)
    grad = tp.backward(T.smoothness(dn))[dn]
    fn = lambda x: losses.smoothness(x.reshape(d.shape))
    return T.grad_check(fn, grad, d, STEP, TOL, n_coords=256, seed=seed)


def check_seg_loss(seed: int) -> T.GradCheckReport:
    rng = np.random.default_rng([seed, 4])
    dims = _dims(rng)
    lf = rng.integers(0, 6, size=dims).astype(float)
    # stay clear of |lf - wl| = 0 and wl = 0, where the l1 norms kink
    offset = rng.uniform(0.1, 0.9, size=dims) * rng.choice([-1.0, 1.0], size=dims)
    wl = np.abs(lf + offset)
    tp = T.Tape()
    wn = tp.variable(wl)
    w = CHECK_WEIGHTS
    grad = tp.backward(T.seg_loss(lf, wn, w.c1, w.c2))[wn]
    fn = lambda x: losses.seg_loss(lf, x.reshape(dims), w.c1, w.c2)
    return T.grad_check(fn, grad, wl, STEP, TOL, n_coords=256, seed=seed)


def check_loss_hr(seed: int) -> T.GradCheckReport:
    rng = np.random.default_rng([seed, 5])
    dims = _dims(rng)
    f = rng.normal(size=dims)
    m = rng.normal(size=dims)
    lf = rng.integers(0, 4, size=dims).astype(float)
    lm = rng.integers(0, 4, size=dims).astype(float)
    d = _field(rng, dims)
    w = CHECK_WEIGHTS
    tp = T.Tape()
    dn = tp.variable(d)
    node, _ = T.loss_hr(f, m, dn, w, lf, lm)
    grad = tp.backward(node)[dn]
    fn = lambda x: losses.loss_hr(f, m, x.reshape(d.shape), lf, lm, weights=w)
    return T.grad_check(fn, grad, d, STEP, TOL, n_coords=256, seed=seed, exclude=_near_grid(d))


def check_loss_lr(seed: int) -> T.GradCheckReport:
    rng = np.random.default_rng([seed, 6])
    dims = tuple(2 * int(n) for n in rng.integers(3, 6, size=3))
    f = rng.normal(size=dims)
    m_lr = losses.downsample_levels(rng.normal(size=dims), 1)
    d = _field(rng, m_lr.shape, 1.0)
    w = CHECK_WEIGHTS
    tp = T.Tape()
    dn = tp.variable(d)
    node, _ = T.loss_lr(f, m_lr, dn, w)
    grad = tp.backward(node)[dn]
    fn = lambda x: losses.loss_lr(f, m_lr, x.reshape(d.shape), weights=w)
    return T.grad_check(fn, grad, d, STEP, TOL, exclude=_near_grid(d))


def network_instance(seed: int, arch: ArchConfig = TINY_ARCH, dims=(8, 8, 8)):
    """Parameters with small non-zero heads plus an input pair.

    The head biases of 0.5 keep every predicted displacement between grid
    points, so finite differences never straddle a warp kink.
    """
    rng = np.random.default_rng([seed, 7])
    params = init_params(arch, seed)
    for name, t in params.tensors.items():
        if name.startswith("head") and name.endswith("weight"):
            params.tensors[name] = rng.normal(0.0, 0.003, size=t.shape)
        elif name.startswith("head"):
            params.tensors[name] = np.full(t.shape, 0.5)
        elif name.endswith(("gamma", "beta", "slope")):
            params.tensors[name] = t + rng.normal(0.0, 0.1, size=t.shape)
    return params, rng.normal(size=dims), rng.normal(size=dims)


def network_loss(params, f, m, weights: LossWeights = CHECK_WEIGHTS, lam: float = 0.3):
    """Overall loss of one pair and the gradient for every parameter tensor."""
    tp = T.Tape()
    nodes = param_nodes(tp, params)
    res = build_graph(tp, nodes, f, m, params.arch)
    hr, _ = T.loss_hr(f, m, res.d_hr, weights)
    lr, _ = T.loss_lr(f, losses.downsample_levels(m, params.arch.depth), res.d_lr, weights)
    root = T.overall(hr, lr, lam)
    grads = tp.backward(root)
    return float(root.value), {name: grads[node] for name, node in nodes.items()}


def _kink_signature(params, f, m):
    """Sign of every PReLU input and grid cell of every warp sample position."""
    tp = T.Tape()
    nodes = param_nodes(tp, params, frozen=tuple(params.tensors))
    res = build_graph(tp, nodes, f, m, params.arch)
    # held so that the warp nodes stay on the tape
    roots = (
        T.loss_hr(f, m, res.d_hr, CHECK_WEIGHTS),
        T.loss_lr(f, losses.downsample_levels(m, params.arch.depth), res.d_lr, CHECK_WEIGHTS),
    )
    sig = []
    for node in tp.nodes:
        if node.name == "prelu":
            sig.append(node.parents[0].value > 0)
        elif node.name == "warp":
            sig.append(np.floor(node.parents[1].value))
    del roots
    return sig


def check_network(seed: int, n_coords: int = 96) -> T.GradCheckReport:
    """Tiny-network check on a random parameter subset.

    A network loss is piecewise smooth: PReLU and the warp have kinks. A probed
    coordinate whose +-step perturbation moves any PReLU input across zero or
    any sample position across a grid line is dropped, because the central
    difference there measures a one-sided slope mix rather than the derivative.
    """
    params, f, m = network_instance(seed)
    _, grads = network_loss(params, f, m)
    analytic = np.concatenate([grads[k].ravel() for k in params.tensors])
    x0 = params.flat()
    rng = np.random.default_rng([seed, 8])
    base = _kink_signature(params, f, m)
    keep = np.zeros(x0.size, dtype=bool)
    for i in rng.permutation(x0.size):
        if keep.sum() == n_coords:
            break
        smooth = True
        for sign in (1.0, -1.0):
            x = x0.copy()
            x[i] += sign * STEP
            sig = _kink_signature(params.with_flat(x), f, m)
            if not all(np.array_equal(a, b) for a, b in zip(base, sig)):
                smooth = False
                break
        keep[i] = smooth
    fn = lambda x: network_loss(params.with_flat(x), f, m)[0]
    return T.grad_check(fn, analytic, x0, STEP, NETWORK_TOL, exclude=~keep)


CHECKS: dict[str, Callable[[int], T.GradCheckReport]] = {
    "warp": check_warp,
    "lncc": check_lncc,
    "smoothness": check_smoothness,
    "segloss": check_seg_loss,
    "loss_hr": check_loss_hr,
    "loss_lr": check_loss_lr,
    "network": check_network,
}

"""A small reverse-mode tape over whole-volume operations.

Each recorded node holds one array-valued result and a closure that maps the
upstream gradient of that result to gradients of its inputs. The adjoints
themselves live next to their forward kernels (warp, losses, volume, layers);
this module wires them together and provides a finite-difference checker.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import layers, losses
from .volume import as_array, upsample_trilinear, upsample_trilinear_adjoint
from .warp import warp_backward, _warp


class Node:
    __slots__ = ("value", "parents", "vjp", "requires_grad", "name", "tape", "__weakref__")

    def __init__(self, tape, value, parents=(), vjp=None, requires_grad=False, name=None):
        self.tape = tape
        self.value = value
        self.parents = tuple(parents)
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name

    @property
    def is_leaf(self):
        return self.vjp is None

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Node({self.name or 'op'}, shape={self.shape})"


class Tape:
    """Records nodes in creation order.

    Nodes point at their tape, so the tape only keeps weak references back;
    otherwise every recorded graph would be a reference cycle whose arrays
    survive until the next full garbage collection. A node stays alive while
    the caller or a descendant node holds it.
    """

    def __init__(self):
        self._refs: list[weakref.ref] = []

    def _add(self, node):
        self._refs.append(weakref.ref(node))
        return node

    @property
    def nodes(self) -> list[Node]:
        alive = (r() for r in self._refs)
        return [n for n in alive if n is not None]

    def variable(self, value, name=None) -> Node:
        """A leaf that receives a gradient."""
        return self._add(Node(self, np.asarray(value, dtype=np.float64), requires_grad=True, name=name))

    def constant(self, value, name=None) -> Node:
        return self._add(Node(self, as_array(value), name=name))

    def record(self, value, parents: Sequence[Node], vjp: Callable, name=None) -> Node:
        needs = any(p.requires_grad for p in parents)
        return self._add(Node(self, value, parents, vjp if needs else None, needs, name))

    @property
    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]

    def backward(self, root: Node) -> dict:
        """Gradients of scalar ``root`` for every variable on this tape.

        Variables that ``root`` does not depend on get zeros.
        """
        if np.size(root.value) != 1:
            raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
        grads = {id(root): np.ones_like(np.asarray(root.value, dtype=np.float64))}
        # recording order is a topological order
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
        return {leaf: grads.get(id(leaf), np.zeros_like(leaf.value)) for leaf in self.leaves}


def _tape_of(*nodes) -> Tape:
    for n in nodes:
        if isinstance(n, Node):
            return n.tape
    raise ValueError("at least one argument must be a tape node")


def _node(tape, x):
    return x if isinstance(x, Node) else tape.constant(x)


# --- elementwise / algebraic ------------------------------------------------

def add(a: Node, b: Node) -> Node:
    t = _tape_of(a, b)
    a, b = _node(t, a), _node(t, b)
    return t.record(a.value + b.value, (a, b), lambda g: (g, g), "add")


def scale(a: Node, s: float) -> Node:
    return a.tape.record(s * a.value, (a,), lambda g: (s * g,), "scale")


def linear_combination(terms: Sequence[tuple[float, Node]]) -> Node:
    t = _tape_of(*(n for _, n in terms))
    coefs = [float(c) for c, _ in terms]
    nodes = [_node(t, n) for _, n in terms]
    value = sum(c * n.value for c, n in zip(coefs, nodes))
    return t.record(np.asarray(value, dtype=np.float64), nodes, lambda g: tuple(c * g for c in coefs), "lincomb")


def dot(a: Node, b: Node) -> Node:
    """Scalar inner product of two same-shape nodes."""
    t = _tape_of(a, b)
    a, b = _node(t, a), _node(t, b)
    va, vb = a.value, b.value
    return t.record(np.asarray(float(np.sum(va * vb))), (a, b), lambda g: (g * vb, g * va), "dot")


def total(a: Node) -> Node:
    return a.tape.record(np.asarray(float(np.sum(a.value))), (a,), lambda g: (np.full_like(a.value, g),), "sum")


# --- registration ops -------------------------------------------------------

def warp(m, d) -> Node:
    """Trilinear warp of ``m`` by field ``d``; differentiable in both."""
    t = _tape_of(m, d)
    m, d = _node(t, m), _node(t, d)
    mv, dv = m.value, d.value

    def vjp(g):
        gd, gm = warp_backward(mv, dv, g, need_grad_m=m.requires_grad)
        return gm, gd

    return t.record(_warp(mv, dv), (m, d), vjp, "warp")


def lncc(f, w: Node, n: int, reduction: str = "mean") -> Node:
    t = _tape_of(f, w)
    f, w = _node(t, f), _node(t, w)
    if f.requires_grad:
        raise NotImplementedError("lncc is differentiable in its second argument only")
    fv, wv = f.value, w.value
    value = losses.lncc(fv, wv, n, reduction)
    return t.record(
        np.asarray(value),
        (f, w),
        lambda g: (None, losses.lncc_backward(fv, wv, n, float(g), reduction)),
        "lncc",
    )


def smoothness(d: Node) -> Node:
    dv = d.value
    return d.tape.record(
        np.asarray(losses.smoothness(dv)), (d,), lambda g: (losses.smoothness_backward(dv, float(g)),), "smoothness"
    )


def seg_loss(lf, wl: Node, c1: float, c2: float) -> Node:
    t = _tape_of(lf, wl)
    lf, wl = _node(t, lf), _node(t, wl)
    if lf.requires_grad:
        raise NotImplementedError("seg_loss is differentiable in the warped labels only")
    lv, wv = lf.value, wl.value
    return t.record(
        np.asarray(losses.seg_loss(lv, wv, c1, c2)),
        (lf, wl),
        lambda g: (None, losses.seg_loss_backward(lv, wv, c1, c2, float(g))),
        "seg_loss",
    )


def upsample(x: Node, target_dims) -> Node:
    src = x.shape[-3:]
    return x.tape.record(
        upsample_trilinear(x.value, target_dims),
        (x,),
        lambda g: (upsample_trilinear_adjoint(g, src),),
        "upsample",
    )


# --- network layers ---------------------------------------------------------

def conv3d(x: Node, weight: Node, bias: Optional[Node] = None, stride: int = 1) -> Node:
    t = weight.tape
    xv, wv = x.value, weight.value
    bv = None if bias is None else bias.value
    parents = (x, weight) if bias is None else (x, weight, bias)
    cols = layers.im2col(xv, stride)

    def vjp(g):
        gx, gw, gb = layers.conv3d_backward(
            xv, wv, g, stride, with_bias=bias is not None, need_grad_x=x.requires_grad, cols=cols
        )
        return (gx, gw) if bias is None else (gx, gw, gb)

    return t.record(layers.conv3d(xv, wv, bv, stride, cols=cols), parents, vjp, "conv3d")


def instance_norm(x: Node, gamma: Node, beta: Node) -> Node:
    y, cache = layers.instance_norm(x.value, gamma.value, beta.value)
    gv = gamma.value
    return gamma.tape.record(y, (x, gamma, beta), lambda g: layers.instance_norm_backward(g, gv, cache), "instance_norm")


def prelu(x: Node, slope: Node) -> Node:
    xv, sv = x.value, slope.value
    return slope.tape.record(layers.prelu(xv, sv), (x, slope), lambda g: layers.prelu_backward(xv, sv, g), "prelu")


def nn_upsample(x: Node) -> Node:
    return x.tape.record(layers.nn_upsample2x(x.value), (x,), lambda g: (layers.nn_upsample2x_backward(g),), "nn_upsample")


# --- composite losses -------------------------------------------------------

def loss_hr(f, m, d: Node, weights, labels_f=None, labels_m=None) -> tuple[Node, dict]:
    """High-resolution loss node plus its individual terms (for logging)."""
    if (labels_f is None) != (labels_m is None):
        raise ValueError("labels must be provided for both images or neither")
    t = d.tape
    sim = lncc(f, warp(m, d), weights.window_n, weights.lncc_reduction)
    reg = smoothness(d)
    terms = [(-1.0, sim), (weights.alpha1, reg)]
    parts = {"lncc": float(sim.value), "smoothness": float(reg.value)}
    if labels_f is not None and weights.alpha2 > 0:
        sl = seg_loss(t.constant(labels_f), warp(labels_m, d), weights.c1, weights.c2)
        terms.append((weights.alpha2, sl))
        parts["seg_loss"] = float(sl.value)
    return linear_combination(terms), parts


def loss_lr(f_hr, m_lr, d_lr: Node, weights) -> tuple[Node, dict]:
    f_hr = as_array(f_hr)
    m_lr = as_array(m_lr)
    if m_lr.shape != d_lr.shape[1:]:
        raise ValueError(f"dims mismatch: LR moving {m_lr.shape} vs LR field {d_lr.shape[1:]}")
    up = upsample(warp(m_lr, d_lr), f_hr.shape)
    sim = lncc(f_hr, up, weights.window_n, weights.lncc_reduction)
    reg = smoothness(d_lr)
    node = linear_combination([(-1.0, sim), (weights.alpha3, reg)])
    return node, {"lncc": float(sim.value), "smoothness": float(reg.value)}


def overall(l_hr: Node, l_lr: Optional[Node], lam: float) -> Node:
    if l_lr is None:
        return l_hr
    return linear_combination([(1.0 - lam, l_hr), (lam, l_lr)])


# --- finite-difference checking ---------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_index: int
    checked: int
    passed: bool
    tol: float

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} max_rel_err={self.max_rel_err:.3e} worst_index={self.worst_index} checked={self.checked} tol={self.tol:g}"


def relative_error(analytic, numeric, floor: float = 1e-8):
    """Per-coordinate |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(
    fn: Callable[[np.ndarray], float],
    grad,
    x0,
    step: float = 1e-4,
    tol: float = 1e-4,
    n_coords: Optional[int] = None,
    seed: int = 0,
    exclude: Optional[np.ndarray] = None,
    floor: Optional[float] = None,
) -> GradCheckReport:
    """Compare an analytic gradient with central differences of ``fn``.

    ``grad`` is the analytic gradient at ``x0`` (array) or a callable giving it.
    With ``n_coords`` only a random subset of that many coordinates is probed.
    ``exclude`` masks coordinates known to sit on a kink. ``floor`` bounds the
    denominator of the relative error; by default it is 1e-6 of the largest
    gradient magnitude so that round-off on near-zero entries is not reported
    as a relative blow-up.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.asarray(x0, dtype=np.float64).ravel().copy()
    analytic = np.asarray(grad(x0) if callable(grad) else grad, dtype=np.float64).ravel()
    if analytic.shape != x0.shape:
        raise ValueError(f"gradient shape {analytic.shape} does not match parameter shape {x0.shape}")
    candidates = np.arange(x0.size)
    if exclude is not None:
        candidates = candidates[~np.asarray(exclude, dtype=bool).ravel()]
    if n_coords is not None and n_coords < candidates.size:
        rng = np.random.default_rng(seed)
        candidates = np.sort(rng.choice(candidates, size=n_coords, replace=False))
    numeric = np.empty(candidates.size)
    x = x0.copy()
    for j, i in enumerate(candidates):
        x[i] = x0[i] + step
        fp = float(fn(x))
        x[i] = x0[i] - step
        fm = float(fn(x))
        x[i] = x0[i]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value probing coordinate {i}")
        numeric[j] = (fp - fm) / (2.0 * step)
    a = analytic[candidates]
    if floor is None:
        scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(numeric), initial=0.0))
        floor = max(1e-6 * scale, 1e-12)
    rel = relative_error(a, numeric, floor)
    if rel.size == 0:
        return GradCheckReport(0.0, -1, 0, True, tol)
    worst = int(np.argmax(rel))
    max_rel = float(rel[worst])
    return GradCheckReport(max_rel, int(candidates[worst]), int(candidates.size), max_rel <= tol, tol)

"""Adam, learning-rate schedule, network training and direct field optimisation."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import tape as T
from .config import ArchConfig, DirectConfig, LossWeights, TrainConfig
from .losses import lambda_schedule, lncc, smoothness, loss_lr as loss_lr_value
from .metrics import dice_multilabel, ncc
from .network import NetworkParams, build_graph, forward, init_params, param_nodes
from .volume import as_array, build_pyramid, downsample2x, upsample_trilinear
from .warp import warp_nearest, warp_trilinear

log = logging.getLogger(__name__)

ADAM_EPS = 1e-8


class TrainingDiverged(FloatingPointError):
    """Raised on a non-finite loss; carries the last parameters that produced a finite one."""

    def __init__(self, message, last_good=None, history=None):
        super().__init__(message)
        self.last_good = last_good
        self.history = history


def lr_schedule(i: int, lr0: float = 0.002, decay: float = 0.9, every: int = 1000, floor: float = 0.0001) -> float:
    """Step decay lr0 * decay^floor(i / every), never below ``floor``."""
    if i < 0:
        raise ValueError("iteration index must be >= 0")
    return max(floor, lr0 * decay ** (i // every))


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def clip_global_norm(grads: dict, max_norm: Optional[float]) -> tuple[dict, float]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    s = max_norm / norm
    return {k: g * s for k, g in grads.items()}, norm


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = ADAM_EPS):
    """One bias-corrected Adam update; returns ``(new_params, state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise FloatingPointError(f"non-finite gradient for {name!r} ({bad} entries)")
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        m = beta1 * state.m.get(name, 0.0) + (1 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        out[name] = p - lr * mhat / (np.sqrt(vhat) + eps)
    return out, state


# --- history ----------------------------------------------------------------

HISTORY_FIELDS = ("iteration", "lam", "lr", "l_overall", "l_hr", "l_lr", "val_dice", "val_ncc")


@dataclass
class History:
    records: list = field(default_factory=list)

    def append(self, **rec):
        if self.records and rec["iteration"] <= self.records[-1]["iteration"]:
            raise ValueError("history iterations must be strictly increasing")
        self.records.append({k: rec.get(k) for k in HISTORY_FIELDS})

    def __len__(self):
        return len(self.records)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] if r[name] is not None else np.nan for r in self.records], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in self.records:
            w.writerow(["" if r[k] is None else (str(r[k]) if k == "iteration" else repr(float(r[k]))) for k in HISTORY_FIELDS])
        return buf.getvalue()

    def summary(self) -> dict:
        if not self.records:
            return {"iterations": 0}
        first, last = self.records[0], self.records[-1]
        return {
            "iterations": len(self.records),
            "initial_l_overall": first["l_overall"],
            "final_l_overall": last["l_overall"],
            "final_l_hr": last["l_hr"],
            "final_lr": last["lr"],
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


# --- training ---------------------------------------------------------------

@dataclass
class Sample:
    fixed: np.ndarray
    moving: np.ndarray
    labels_fixed: Optional[np.ndarray] = None
    labels_moving: Optional[np.ndarray] = None

    @classmethod
    def of(cls, item) -> "Sample":
        if isinstance(item, Sample):
            return item
        item = tuple(item)
        if len(item) not in (2, 4):
            raise ValueError("dataset items are (F, M) or (F, M, L_F, L_M)")
        arrays = [as_array(x) for x in item]
        return cls(*arrays)


def permutation_pairs(images: Sequence, labels: Optional[Sequence] = None) -> list:
    """Every ordered (fixed, moving) pair i != j of an image collection."""
    out = []
    for i in range(len(images)):
        for j in range(len(images)):
            if i == j:
                continue
            if labels is None:
                out.append((images[i], images[j]))
            else:
                out.append((images[i], images[j], labels[i], labels[j]))
    return out


def _lr_inputs(sample: Sample, depth: int):
    m_lr = as_array(sample.moving)
    for _ in range(depth):
        m_lr = downsample2x(m_lr)
    return m_lr


def training_step(params: NetworkParams, sample: Sample, i: int, weights: LossWeights, lam_initial=0.5, lam_period=1000.0):
    """Loss and parameter gradients for one sample at iteration ``i``."""
    arch = params.arch
    tp = T.Tape()
    nodes = param_nodes(tp, params)
    res = build_graph(tp, nodes, sample.fixed, sample.moving, arch)
    l_hr, _ = T.loss_hr(sample.fixed, sample.moving, res.d_hr, weights, sample.labels_fixed, sample.labels_moving)
    m_lr = _lr_inputs(sample, arch.depth)
    lam = lambda_schedule(i, lam_initial, lam_period)
    if arch.deep_supervision:
        l_lr, _ = T.loss_lr(sample.fixed, m_lr, res.d_lr, weights)
        root = T.overall(l_hr, l_lr, lam)
        l_lr_value = float(l_lr.value)
    else:
        root = l_hr
        # tracked for comparison only; carries no weight
        l_lr_value = loss_lr_value(sample.fixed, m_lr, res.d_lr.value, weights)
    grads = tp.backward(root)
    named = {name: grads[node] for name, node in nodes.items()}
    losses = {"l_overall": float(root.value), "l_hr": float(l_hr.value), "l_lr": l_lr_value, "lam": lam}
    return losses, named


def evaluate_pair(params: NetworkParams, sample: Sample) -> dict:
    d = register_learned(params, sample.fixed, sample.moving)
    out = {"ncc": ncc(sample.fixed, warp_trilinear(sample.moving, d))}
    if sample.labels_fixed is not None:
        _, out["dice"] = dice_multilabel(sample.labels_fixed, warp_nearest(sample.labels_moving, d))
    return out


def train(
    dataset: Sequence,
    arch: ArchConfig,
    cfg: TrainConfig,
    validation: Optional[Sequence] = None,
    params: Optional[NetworkParams] = None,
    callback: Optional[Callable] = None,
) -> tuple[NetworkParams, History]:
    """Mini-batch-of-one training over ``dataset`` pairs.

    Each epoch visits every pair once in an order shuffled by ``cfg.seed``.
    ``callback(i, losses, params)`` is invoked after every update.
    """
    samples = [Sample.of(item) for item in dataset]
    if samples:
        dims = samples[0].fixed.shape
        for s in samples:
            if s.fixed.shape != dims or s.moving.shape != dims:
                raise ValueError(f"all volumes must share dims {dims}, got {s.fixed.shape} / {s.moving.shape}")
        arch.check_dims(dims)
    val = [Sample.of(item) for item in (validation or [])]
    params = params.copy() if params is not None else init_params(arch, cfg.seed)
    history = History()
    if cfg.epochs == 0 or not samples:
        return params, history
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    state = AdamState()
    w = cfg.weights
    i = 0
    total = cfg.epochs * len(samples)
    if cfg.max_iterations is not None:
        total = min(total, cfg.max_iterations)
    while i < total:
        order = rng.permutation(len(samples)) if cfg.shuffle else np.arange(len(samples))
        for idx in order:
            if i >= total:
                break
            losses, grads = training_step(params, samples[idx], i, w, cfg.lambda0, cfg.lambda_period)
            if not np.isfinite(losses["l_overall"]):
                raise TrainingDiverged(f"non-finite loss at iteration {i}", params, history)
            grads, _ = clip_global_norm(grads, cfg.grad_clip)
            lr = lr_schedule(i, cfg.lr0, cfg.lr_decay, cfg.decay_every, cfg.lr_floor)
            new_tensors, state = adam_step(params.tensors, grads, state, lr, cfg.beta1, cfg.beta2)
            params = NetworkParams(arch, new_tensors)
            rec = dict(iteration=i, lr=lr, **losses)
            if cfg.validate_every and val and (i + 1) % cfg.validate_every == 0:
                scores = [evaluate_pair(params, s) for s in val]
                rec["val_ncc"] = float(np.mean([s["ncc"] for s in scores]))
                dices = [s["dice"] for s in scores if "dice" in s]
                if dices:
                    rec["val_dice"] = float(np.mean(dices))
            history.append(**rec)
            if callback is not None:
                callback(i, losses, params)
            i += 1
    return params, history


def register_learned(params: NetworkParams, f, m) -> np.ndarray:
    """Single forward pass; returns the full-resolution field."""
    d_hr, _, _ = forward(params, f, m)
    return d_hr


# --- direct optimisation -----------------------------------------------------

def direct_objective(f, m, d, alpha: float, n: int) -> float:
    return -lncc(f, warp_trilinear(m, d), n) + alpha * smoothness(d)


def _direct_grad(f, m, d, alpha, n):
    tp = T.Tape()
    dn = tp.variable(d)
    sim = T.lncc(f, T.warp(m, dn), n)
    root = T.linear_combination([(-1.0, sim), (alpha, T.smoothness(dn))])
    return float(root.value), tp.backward(root)[dn]


def register_direct(
    f,
    m,
    levels: int = 2,
    iters_per_level: int = 200,
    cfg: Optional[DirectConfig] = None,
    on_level_end: Optional[Callable] = None,
) -> np.ndarray:
    """Optimise a field directly, coarse to fine, for ``f ~ m o (x + d)``.

    The field of each level seeds the next: trilinear upsampling, offsets x2.
    ``on_level_end(level, d)`` sees each level's result at that level's grid.
    """
    cfg = cfg or DirectConfig()
    f = as_array(f)
    m = as_array(m)
    if f.shape != m.shape:
        raise ValueError(f"dims mismatch: fixed {f.shape} vs moving {m.shape}")
    pf = build_pyramid(f, levels)
    pm = build_pyramid(m, levels)
    d = np.zeros((3, *pf.dims[-1]))
    for level in range(levels - 1, -1, -1):
        dims = pf.dims[level]
        if d.shape[1:] != dims:
            d = 2.0 * upsample_trilinear(d, dims)
        n = cfg.window_for(dims)
        state = AdamState()
        for _ in range(iters_per_level):
            value, g = _direct_grad(pf[level], pm[level], d, cfg.alpha, n)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite objective at level {level}")
            grads, _ = clip_global_norm({"d": g * g[0].size}, cfg.grad_clip)
            new, state = adam_step({"d": d}, grads, state, cfg.lr, cfg.beta1, cfg.beta2, eps=cfg.eps)
            d = new["d"]
        if on_level_end is not None:
            on_level_end(level, d)
    return d

"""Encoder-decoder that maps a (fixed, moving) pair to a displacement field.

Layout for ``ArchConfig(c, k, depth)`` with channels ``c * 2**level``:

* encoder stage 0: conv 2->c, then ``k`` conv blocks at full resolution
* encoder stage l = 1..depth: stride-2 conv, then ``k`` conv blocks
* LR head: conv from the bottom features to 3 channels (auxiliary field)
* decoder stage l = depth-1..0: nearest-neighbour 2x upsample + conv, plus the
  encoder output of the same level (additive forwarding), then ``k`` blocks
* HR head: conv from decoder stage 0 to 3 channels

Every conv outside the heads is followed by instance norm and PReLU. With
residual learning the ``k`` blocks of a stage are bypassed by an identity skip.
Both heads start at zero, so an untrained network predicts the identity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from .config import ArchConfig
from .volume import as_array

PRELU_INIT = 0.25


def _block_specs(arch: ArchConfig):
    """(name, c_in, c_out, stride) of every conv block in execution order."""
    ch = arch.channels
    specs = [("enc0.in", 2, ch[0], 1)]
    specs += [(f"enc0.conv{j}", ch[0], ch[0], 1) for j in range(arch.k)]
    for level in range(1, arch.depth + 1):
        specs.append((f"enc{level}.down", ch[level - 1], ch[level], 2))
        specs += [(f"enc{level}.conv{j}", ch[level], ch[level], 1) for j in range(arch.k)]
    for level in range(arch.depth - 1, -1, -1):
        specs.append((f"dec{level}.up", ch[level + 1], ch[level], 1))
        specs += [(f"dec{level}.conv{j}", ch[level], ch[level], 1) for j in range(arch.k)]
    return specs


def _head_specs(arch: ArchConfig):
    return [("head_lr", arch.channels[-1]), ("head_hr", arch.channels[0])]


def param_shapes(arch: ArchConfig) -> dict[str, tuple]:
    shapes = {}
    for name, cin, cout, _ in _block_specs(arch):
        shapes[f"{name}.weight"] = (cout, cin, 3, 3, 3)
        shapes[f"{name}.gamma"] = (cout,)
        shapes[f"{name}.beta"] = (cout,)
        shapes[f"{name}.slope"] = (cout,)
    for name, cin in _head_specs(arch):
        shapes[f"{name}.weight"] = (3, cin, 3, 3, 3)
        shapes[f"{name}.bias"] = (3,)
    return shapes


def param_count(arch: ArchConfig) -> int:
    """Closed form: 27*cin*cout + 3*cout per block, 81*cin + 3 per head."""
    blocks = sum(27 * cin * cout + 3 * cout for _, cin, cout, _ in _block_specs(arch))
    heads = sum(27 * cin * 3 + 3 for _, cin in _head_specs(arch))
    return blocks + heads


@dataclass
class NetworkParams:
    arch: ArchConfig
    tensors: dict = field(default_factory=dict)

    def count(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.tensors.values()])

    def with_flat(self, x: np.ndarray) -> "NetworkParams":
        out, pos = {}, 0
        for k, v in self.tensors.items():
            out[k] = np.asarray(x[pos : pos + v.size], dtype=np.float64).reshape(v.shape).copy()
            pos += v.size
        return NetworkParams(self.arch, out)


def init_params(arch: ArchConfig, seed: int = 0) -> NetworkParams:
    """He-style fan-in scaled kernels, unit-gain norms, PReLU 0.25, zero heads."""
    if not isinstance(arch, ArchConfig):
        raise TypeError("arch must be an ArchConfig")
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(arch).items():
        kind = name.rsplit(".", 1)[1]
        if name.startswith("head"):
            tensors[name] = np.zeros(shape)
        elif kind == "weight":
            fan_in = shape[1] * 27
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif kind == "gamma":
            tensors[name] = np.ones(shape)
        elif kind == "beta":
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = np.full(shape, PRELU_INIT)
    return NetworkParams(arch, tensors)


@dataclass
class ForwardResult:
    d_hr: T.Node
    d_lr: T.Node
    activations: dict


def _block(x, p, name, stride=1):
    h = T.conv3d(x, p[f"{name}.weight"], stride=stride)
    h = T.instance_norm(h, p[f"{name}.gamma"], p[f"{name}.beta"])
    return T.prelu(h, p[f"{name}.slope"])


def _stage(x, p, prefix, arch, acts):
    h = x
    for j in range(arch.k):
        h = _block(h, p, f"{prefix}.conv{j}")
    if arch.residual_learning:
        h = T.add(h, x)
    acts[prefix] = h
    return h


def build_graph(tape: T.Tape, nodes: dict, f, m, arch: ArchConfig) -> ForwardResult:
    """Record the forward pass on ``tape``; ``nodes`` maps parameter names to tape nodes."""
    f = as_array(f)
    m = as_array(m)
    if f.shape != m.shape:
        raise ValueError(f"dims mismatch: fixed {f.shape} vs moving {m.shape}")
    arch.check_dims(f.shape)
    acts = {}
    x = tape.constant(np.stack([f, m]), name="input")
    h = _block(x, nodes, "enc0.in")
    skips = [_stage(h, nodes, "enc0", arch, acts)]
    for level in range(1, arch.depth + 1):
        h = _block(skips[-1], nodes, f"enc{level}.down", stride=2)
        skips.append(_stage(h, nodes, f"enc{level}", arch, acts))
    bottom = skips[-1]
    d_lr = T.conv3d(bottom, nodes["head_lr.weight"], nodes["head_lr.bias"])
    h = bottom
    for level in range(arch.depth - 1, -1, -1):
        h = _block(T.nn_upsample(h), nodes, f"dec{level}.up")
        if arch.additive_forwarding:
            h = T.add(h, skips[level])
        h = _stage(h, nodes, f"dec{level}", arch, acts)
    d_hr = T.conv3d(h, nodes["head_hr.weight"], nodes["head_hr.bias"])
    return ForwardResult(d_hr, d_lr, acts)


def param_nodes(tape: T.Tape, params: NetworkParams, frozen=()) -> dict:
    """Put parameters on the tape; names in ``frozen`` become constants."""
    return {
        k: (tape.constant(v, name=k) if k in frozen else tape.variable(v, name=k)) for k, v in params.tensors.items()
    }


def forward(params: NetworkParams, f, m):
    """Plain inference: returns ``(d_hr, d_lr, activations)`` as arrays."""
    tp = T.Tape()
    res = build_graph(tp, param_nodes(tp, params, frozen=tuple(params.tensors)), f, m, params.arch)
    acts = {k: v.value for k, v in res.activations.items()}
    return res.d_hr.value, res.d_lr.value, acts


def backward_params(tape: T.Tape, root: T.Node, nodes: dict) -> dict:
    """Gradient of ``root`` for every parameter; frozen (constant) entries get zeros."""
    grads = tape.backward(root)
    out = {}
    for name, node in nodes.items():
        out[name] = grads[node] if node.requires_grad else np.zeros_like(node.value)
    return out

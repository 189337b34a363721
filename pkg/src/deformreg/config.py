"""Dataclass configs, presets and the versioned JSON config file."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

CONFIG_VERSION = 1


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1e-8  # HR smoothness
    alpha2: float = 0.2  # segmentation loss
    alpha3: float = 8e-8  # LR smoothness
    c1: float = 10.0
    c2: float = 1e-9
    window_n: int = 9
    lncc_reduction: str = "mean"  # "mean" over window centres, or "sum"

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3, self.c1) < 0:
            raise ValueError("loss weights and c1 must be non-negative")
        if self.c2 <= 0:
            raise ValueError("c2 must be positive")
        if self.window_n < 3 or self.window_n % 2 == 0:
            raise ValueError(f"window_n must be odd and >= 3, got {self.window_n}")
        if self.lncc_reduction not in ("mean", "sum"):
            raise ValueError(f"lncc_reduction must be 'mean' or 'sum', got {self.lncc_reduction!r}")


# Values tuned for full-size brain volumes (160x208x176).
FULL_SCALE_WEIGHTS = LossWeights()

# Desk-scale volumes (16^3 - 64^3). The smoothness sum grows with voxel count
# while the mean-normalised LNCC does not, so alpha1 is rescaled upward.
DESK_WEIGHTS = LossWeights(alpha1=2e-5, alpha2=0.2, alpha3=8 * 2e-5, window_n=9)


@dataclass(frozen=True)
class ArchConfig:
    c: int = 16
    k: int = 2
    depth: int = 3
    additive_forwarding: bool = True
    residual_learning: bool = True
    deep_supervision: bool = True

    def __post_init__(self):
        if self.c < 1 or self.k < 1 or self.depth < 1:
            raise ValueError(f"invalid architecture c={self.c}, k={self.k}, depth={self.depth}")

    @property
    def channels(self) -> list[int]:
        return [self.c * 2**level for level in range(self.depth + 1)]

    def check_dims(self, dims):
        step = 2**self.depth
        if any(int(n) % step for n in dims):
            raise ValueError(f"input dims {tuple(dims)} must be divisible by 2**depth = {step}")

    def lr_dims(self, dims) -> tuple[int, int, int]:
        self.check_dims(dims)
        return tuple(int(n) // 2**self.depth for n in dims)


BASELINE_ARCH = ArchConfig(c=8, k=1)
FULL_SCALE_ARCH = ArchConfig(c=16, k=2)


@dataclass(frozen=True)
class TrainConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    lr0: float = 0.002
    lr_decay: float = 0.9
    decay_every: int = 1000
    lr_floor: float = 0.0001
    lambda0: float = 0.5
    lambda_period: float = 1000.0
    epochs: int = 70
    max_iterations: Optional[int] = None
    seed: int = 0
    shuffle: bool = True
    grad_clip: Optional[float] = 10.0
    validate_every: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.lr_floor > self.lr0:
            raise ValueError("lr_floor must not exceed lr0")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass(frozen=True)
class DirectConfig:
    """Settings for optimising a displacement field directly (no network)."""

    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: Optional[float] = None
    # Adam sees per-voxel gradients (the mean-reduced gradient times the voxel
    # count); eps then damps voxels whose windows carry no structure
    eps: float = 2.0
    alpha: float = 1e-5
    window_n: int = 5

    def window_for(self, dims) -> int:
        # never wider than the smallest axis of a coarse level
        smallest = min(dims)
        return max(3, min(self.window_n, smallest - 1 + smallest % 2))


def _from_dict(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ValueError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ValueError(f"{where}: unknown keys {unknown}")
    kwargs = dict(raw)
    if "weights" in kwargs and "weights" in known:
        kwargs["weights"] = _from_dict(LossWeights, kwargs["weights"], f"{where}.weights")
    return cls(**kwargs)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    direct: DirectConfig = field(default_factory=DirectConfig)
    arch: Optional[ArchConfig] = None


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return parse_config(raw)


def parse_config(raw: dict) -> RunConfig:
    """Validate a config mapping; unknown keys or versions are rejected."""
    if not isinstance(raw, dict):
        raise ValueError("config: expected a JSON object")
    unknown = sorted(set(raw) - {"version", "train", "direct", "arch"})
    if unknown:
        raise ValueError(f"config: unknown keys {unknown}")
    if raw.get("version") != CONFIG_VERSION:
        raise ValueError(f"config: unsupported version {raw.get('version')!r} (expected {CONFIG_VERSION})")
    cfg = RunConfig()
    if "train" in raw:
        cfg = replace(cfg, train=_from_dict(TrainConfig, raw["train"], "config.train"))
    if "direct" in raw:
        cfg = replace(cfg, direct=_from_dict(DirectConfig, raw["direct"], "config.direct"))
    if "arch" in raw:
        cfg = replace(cfg, arch=_from_dict(ArchConfig, raw["arch"], "config.arch"))
    return cfg


def dump_config(cfg: RunConfig) -> dict:
    out = {"version": CONFIG_VERSION, "train": asdict(cfg.train), "direct": asdict(cfg.direct)}
    if cfg.arch is not None:
        out["arch"] = asdict(cfg.arch)
    return out

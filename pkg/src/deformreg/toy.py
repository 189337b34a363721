"""Desk-scale training experiment shared by the scripts and the acceptance tests."""
import dataclasses
from typing import Optional

import numpy as np

from .config import DESK_WEIGHTS, ArchConfig, TrainConfig
from .metrics import dice_multilabel
from .optim import History, Sample, register_learned, train
from .synth import make_pair
from .warp import warp_nearest

TOY_ARCH = ArchConfig(c=4, k=1, depth=2)
TOY_DIMS = (32, 32, 32)
TOY_ITERATIONS = 500
TRAIN_SEEDS = tuple(range(10))
HELD_OUT_SEEDS = tuple(range(100, 105))


def toy_dataset(seeds, dims=TOY_DIMS) -> list[Sample]:
    out = []
    for s in seeds:
        f, m, _, lf, lm = make_pair(dims, amplitude=3.0, smooth_sigma=4.0, seed=s)
        out.append(Sample(f, m, lf, lm))
    return out


def held_out_dice(params, samples) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair mean Dice before and after applying the network's field."""
    pre, post = [], []
    for s in samples:
        pre.append(dice_multilabel(s.labels_fixed, s.labels_moving)[1])
        d = register_learned(params, s.fixed, s.moving)
        post.append(dice_multilabel(s.labels_fixed, warp_nearest(s.labels_moving, d))[1])
    return np.array(pre), np.array(post)


def toy_config(seed: int = 0, iterations: int = TOY_ITERATIONS, seg_loss: bool = True, **weights) -> TrainConfig:
    w = dataclasses.replace(DESK_WEIGHTS, **weights)
    if not seg_loss:
        w = dataclasses.replace(w, alpha2=0.0)
    return TrainConfig(epochs=10**6, max_iterations=iterations, seed=seed, weights=w)


def toy_run(
    seed: int = 0,
    iterations: int = TOY_ITERATIONS,
    seg_loss: bool = True,
    deep_supervision: bool = True,
    train_set: Optional[list] = None,
    callback=None,
    **weights,
) -> tuple[object, History]:
    arch = dataclasses.replace(TOY_ARCH, deep_supervision=deep_supervision)
    data = train_set if train_set is not None else toy_dataset(TRAIN_SEEDS)
    return train(data, arch, toy_config(seed, iterations, seg_loss, **weights), callback=callback)


def epoch_means(history: History, n_pairs: int = len(TRAIN_SEEDS)) -> tuple[float, float]:
    """Mean L_overall over the first and the last ``n_pairs`` iterations."""
    lo = history.column("l_overall")
    return float(lo[:n_pairs].mean()), float(lo[-n_pairs:].mean())

"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from .checks import CHECKS
from .config import DESK_WEIGHTS, ArchConfig, RunConfig, TrainConfig, load_config
from .metrics import dice_multilabel, ncc, ssim
from .optim import TrainingDiverged, register_direct, register_learned, train
from .synth import make_pair
from .volume import DisplacementField, Volume
from .warp import warp_nearest, warp_trilinear

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

PAIR_FILES = {
    "fixed": "fixed.dwv",
    "moving": "moving.dwv",
    "d_true": "d_true.dwv",
    "labels_fixed": "labels_fixed.dwv",
    "labels_moving": "labels_moving.dwv",
}

log = logging.getLogger("deformreg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _triple(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}") from None
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"expected three positive integers, got {text!r}")
    return parts


def _read_intensity(path) -> np.ndarray:
    v = dio.read_volume(path)
    if not isinstance(v, Volume):
        raise ValueError(f"{path}: expected an image volume, found a displacement field")
    return np.array(v.data)


def _read_labels(path) -> np.ndarray:
    v = dio.read_volume(path)
    if not isinstance(v, Volume):
        raise ValueError(f"{path}: expected a label volume, found a displacement field")
    return np.array(Volume.labels(v.data).data)


def _read_field(path) -> np.ndarray:
    v = dio.read_volume(path)
    if not isinstance(v, DisplacementField):
        raise ValueError(f"{path}: expected a displacement field")
    return np.array(v.data)


def _same_dims(a, b, what_a, what_b):
    if a.shape[-3:] != b.shape[-3:]:
        raise ValueError(f"dims mismatch: {what_a} {a.shape[-3:]} vs {what_b} {b.shape[-3:]}")


def _load_run_config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


# --- subcommands ------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    for k in range(args.count):
        seed = args.seed + k
        f, m, d, lf, lm = make_pair(args.dims, args.amplitude, args.sigma, seed=seed, n_blobs=args.blobs)
        target = out if args.count == 1 else out / f"pair_{k:03d}"
        dio.write_volume(target / PAIR_FILES["fixed"], Volume(f))
        dio.write_volume(target / PAIR_FILES["moving"], Volume(m))
        dio.write_volume(target / PAIR_FILES["d_true"], DisplacementField(d))
        dio.write_volume(target / PAIR_FILES["labels_fixed"], Volume.labels(lf))
        dio.write_volume(target / PAIR_FILES["labels_moving"], Volume.labels(lm))
        print(f"wrote pair seed={seed} to {target}")
    return EXIT_OK


def cmd_register(args) -> int:
    if args.direct == (args.model is not None):
        raise UsageError("choose exactly one of --model or --direct")
    if (args.moving_labels is None) != (args.out_warped_labels is None):
        raise UsageError("--moving-labels and --out-warped-labels go together")
    f = _read_intensity(args.fixed)
    m = _read_intensity(args.moving)
    _same_dims(f, m, "fixed", "moving")
    if args.direct:
        cfg = _load_run_config(args.config).direct
        d = register_direct(f, m, levels=args.levels, iters_per_level=args.iters, cfg=cfg)
    else:
        params = dio.load_checkpoint(args.model)
        d = register_learned(params, f, m)
    if not np.all(np.isfinite(d)):
        raise FloatingPointError("registration produced a non-finite field")
    dio.write_volume(args.out_dvf, DisplacementField(d))
    if args.out_warped:
        dio.write_volume(args.out_warped, Volume(warp_trilinear(m, d)))
    if args.moving_labels:
        lm = _read_labels(args.moving_labels)
        _same_dims(f, lm, "fixed", "moving labels")
        dio.write_volume(args.out_warped_labels, Volume.labels(warp_nearest(lm, d)))
    print(f"wrote field {args.out_dvf} (max |d| = {np.abs(d).max():.3f} voxels)")
    return EXIT_OK


def _load_pairs(data_dir: Path) -> list:
    dirs = sorted(p for p in data_dir.iterdir() if p.is_dir() and (p / PAIR_FILES["fixed"]).exists())
    if not dirs and (data_dir / PAIR_FILES["fixed"]).exists():
        dirs = [data_dir]
    if not dirs:
        raise ValueError(f"{data_dir}: no pair directories containing {PAIR_FILES['fixed']}")
    pairs = []
    for p in dirs:
        item = [_read_intensity(p / PAIR_FILES["fixed"]), _read_intensity(p / PAIR_FILES["moving"])]
        lf, lm = p / PAIR_FILES["labels_fixed"], p / PAIR_FILES["labels_moving"]
        if lf.exists() and lm.exists():
            item += [_read_labels(lf), _read_labels(lm)]
        pairs.append(tuple(item))
    if len({len(p) for p in pairs}) != 1:
        raise ValueError(f"{data_dir}: some pairs have label volumes and some do not")
    return pairs


def cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    train_cfg = cfg.train
    if args.config is None:
        # without a config file use the desk-scale loss weights
        train_cfg = dataclasses.replace(train_cfg, weights=DESK_WEIGHTS)
    if args.iterations is not None:
        train_cfg = dataclasses.replace(train_cfg, max_iterations=args.iterations)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    arch = cfg.arch or ArchConfig()
    if args.arch:
        c, k, depth = args.arch
        arch = dataclasses.replace(arch, c=c, k=k, depth=depth)
    if args.no_deep_supervision:
        arch = dataclasses.replace(arch, deep_supervision=False)
    pairs = _load_pairs(Path(args.data_dir))
    try:
        params, history = train(pairs, arch, train_cfg)
    except TrainingDiverged as exc:
        if exc.last_good is not None:
            dio.save_checkpoint(args.out, exc.last_good)
            print(f"training diverged; last good parameters saved to {args.out}", file=sys.stderr)
        raise
    dio.save_checkpoint(args.out, params)
    if args.history:
        dio.atomic_write_text(args.history, history.to_csv())
    print(f"trained {len(history)} iterations on {len(pairs)} pairs; checkpoint {args.out}")
    print(history.to_json())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if (args.labels_fixed is None) != (args.labels_warped is None):
        raise UsageError("--labels-fixed and --labels-warped go together")
    f = _read_intensity(args.fixed)
    w = _read_intensity(args.warped)
    _same_dims(f, w, "fixed", "warped")
    rows = [(args.pair_id, "GLOBAL", "ncc", ncc(f, w))]
    drange = args.dynamic_range if args.dynamic_range is not None else float(np.ptp(f))
    if drange <= 0:
        raise ValueError("fixed image is constant; pass --dynamic-range")
    rows.append((args.pair_id, "GLOBAL", "ssim", ssim(f, w, drange)))
    if args.labels_fixed:
        lf = _read_labels(args.labels_fixed)
        lw = _read_labels(args.labels_warped)
        _same_dims(lf, lw, "fixed labels", "warped labels")
        per_label, mean = dice_multilabel(lf, lw)
        rows += [(args.pair_id, lab, "dice", v) for lab, v in sorted(per_label.items())]
        rows.append((args.pair_id, "GLOBAL", "dice", mean))
    text = dio.metrics_csv(rows)
    if args.report:
        dio.atomic_write_text(args.report, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    ops = list(CHECKS) if args.op == "all" else [args.op]
    failed = []
    for op in ops:
        for k in range(args.seeds):
            report = CHECKS[op](args.seed + k)
            print(f"{op:<10} seed={args.seed + k} {report}")
            if not report.passed:
                failed.append(op)
    if failed:
        print(f"gradient check failed for: {', '.join(sorted(set(failed)))}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# --- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="deformreg", description="Deformable 3D registration toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write synthetic fixed/moving pairs with labels and true fields")
    p.add_argument("--dims", type=_triple, default=(32, 32, 32))
    p.add_argument("--amplitude", type=float, default=3.0)
    p.add_argument("--sigma", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--blobs", type=int, default=6)
    p.add_argument("--count", type=int, default=1, help="number of pairs; >1 writes pair_NNN subdirectories")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("register", help="register a moving image onto a fixed image")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--model", help="checkpoint of a trained network")
    p.add_argument("--direct", action="store_true", help="optimise the field directly")
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--config", help="JSON run config (direct settings)")
    p.add_argument("--out-dvf", required=True)
    p.add_argument("--out-warped")
    p.add_argument("--moving-labels")
    p.add_argument("--out-warped-labels")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("train", help="train the network on a directory of pairs")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--arch", type=_triple, help="c,k,depth")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-deep-supervision", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="Dice / NCC / SSIM report as CSV")
    p.add_argument("--fixed", required=True)
    p.add_argument("--warped", required=True)
    p.add_argument("--labels-fixed")
    p.add_argument("--labels-warped")
    p.add_argument("--pair-id", default="0")
    p.add_argument("--dynamic-range", type=float)
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference checks of the analytic gradients")
    p.add_argument("--op", choices=["all", *CHECKS], default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"deformreg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"deformreg {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"deformreg {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

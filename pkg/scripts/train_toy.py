"""Train the toy network on synthetic pairs and report held-out Dice.

    python scripts/train_toy.py --iterations 500 --seed 0
    python scripts/train_toy.py --alpha2 0        # segmentation loss off
"""
import argparse
import time

from deformreg.config import DESK_WEIGHTS
from deformreg.toy import HELD_OUT_SEEDS, TOY_ITERATIONS, epoch_means, held_out_dice, toy_dataset, toy_run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iterations", type=int, default=TOY_ITERATIONS)
    ap.add_argument("--alpha1", type=float, default=DESK_WEIGHTS.alpha1)
    ap.add_argument("--alpha2", type=float, default=DESK_WEIGHTS.alpha2)
    ap.add_argument("--window", type=int, default=DESK_WEIGHTS.window_n)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--no-ds", action="store_true")
    ap.add_argument("--report-every", type=int, default=100)
    args = ap.parse_args()

    held = toy_dataset(HELD_OUT_SEEDS)
    start = time.time()

    def report(i, losses, params):
        if (i + 1) % args.report_every == 0:
            pre, post = held_out_dice(params, held)
            print(
                f"iter {i + 1:5d}  l_overall {losses['l_overall']:+.4f}  "
                f"held-out dice {post.mean():.4f} (identity {pre.mean():.4f}, improved {int((post > pre).sum())}/5)  "
                f"{time.time() - start:.0f}s",
                flush=True,
            )

    _, hist = toy_run(
        seed=args.seed,
        iterations=args.iterations,
        deep_supervision=not args.no_ds,
        callback=report,
        alpha1=args.alpha1,
        alpha3=8 * args.alpha1,
        alpha2=args.alpha2,
        window_n=args.window,
    )
    first, last = epoch_means(hist)
    print(f"first-epoch mean {first:+.4f}  last-epoch mean {last:+.4f}")


if __name__ == "__main__":
    main()

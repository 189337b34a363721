"""Paired training runs with and without deep supervision; prints L_HR curves.

    python scripts/compare_ds.py --seeds 0 1 2 --iterations 200
"""
import argparse

from deformreg.toy import TRAIN_SEEDS, toy_dataset, toy_run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--iterations", type=int, default=200)
    ap.add_argument("--every", type=int, default=50)
    args = ap.parse_args()

    data = toy_dataset(TRAIN_SEEDS)
    for seed in args.seeds:
        ds = toy_run(seed, args.iterations, deep_supervision=True, train_set=data)[1].column("l_hr")
        plain = toy_run(seed, args.iterations, deep_supervision=False, train_set=data)[1].column("l_hr")
        for i in range(args.every - 1, args.iterations, args.every):
            print(f"seed {seed} iter {i + 1:4d}  L_HR with DS {ds[i]:+.4f}  without {plain[i]:+.4f}", flush=True)


if __name__ == "__main__":
    main()

"""Boundary mIoU with and without the contrastive boundary term, paired by seed.

    python scripts/cbl_sign_test.py --seeds 0 1 2 3 4
"""
import argparse
import time
from dataclasses import replace

from scipy.stats import binomtest

from geoseg.experiment import desk_experiment, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--lambda2", type=float, default=0.2)
    args = ap.parse_args()
    wins = 0
    print("seed lambda2 train_OA train_bmIoU heldout_OA heldout_bmIoU seconds")
    for seed in args.seeds:
        scores = []
        for l2 in (0.0, args.lambda2):
            cfg = desk_experiment(seed)
            cfg = replace(cfg, network=replace(cfg.network, lambda2=l2))
            t = time.time()
            run = run_experiment(cfg)
            tm, hm = run.train_metrics, run.heldout_metrics
            print(f"{seed} {l2:g} {tm.oa:.4f} {tm.boundary.miou:.4f} {hm.oa:.4f} {hm.boundary.miou:.4f} "
                  f"{time.time() - t:.0f}", flush=True)
            scores.append(tm.boundary.miou)
        wins += scores[1] > scores[0]
    p = binomtest(wins, len(args.seeds), 0.5, alternative="greater").pvalue
    print(f"wins={wins}/{len(args.seeds)} one-sided sign test p={p:.4f}")


if __name__ == "__main__":
    main()

"""Train the desk preset once and print training and held-out metrics.

    python scripts/train_desk.py --seed 0 --lambda2 0.2 --log desk.csv
"""
import argparse
import time
from dataclasses import replace

from geoseg.experiment import desk_experiment, format_experiment, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lambda1", type=float)
    ap.add_argument("--lambda2", type=float)
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--log", default="")
    ap.add_argument("--checkpoint", default="")
    args = ap.parse_args()
    cfg = desk_experiment(args.seed)
    net = {k: v for k, v in (("lambda1", args.lambda1), ("lambda2", args.lambda2)) if v is not None}
    tr = {"epochs": args.epochs} if args.epochs is not None else {}
    cfg = replace(cfg, network=replace(cfg.network, **net), train=replace(cfg.train, **tr),
                  output=replace(cfg.output, log=args.log, checkpoint=args.checkpoint))
    print(format_experiment(cfg))
    t = time.time()
    run = run_experiment(cfg, log_heldout=bool(args.log))
    for name, m in (("train", run.train_metrics), ("heldout", run.heldout_metrics)):
        if m is not None:
            print(f"{name}: OA {m.oa:.4f} mIoU {m.miou:.4f} mACC {m.macc:.4f} "
                  f"boundary mIoU {m.boundary.miou:.4f} boundary OA {m.boundary.oa:.4f}")
    print(f"{time.time() - t:.0f}s")


if __name__ == "__main__":
    main()

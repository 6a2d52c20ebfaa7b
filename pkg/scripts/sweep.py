"""Block-removal rows and the loss-weight grid at desk scale, written as one CSV.

    python scripts/sweep.py --out sweep.csv --epochs 30
"""
import argparse
import sys

from geoseg.cli import main as cli


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="sweep.csv")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    common = ["--seed", str(args.seed), "--epochs", str(args.epochs)]
    blocks = args.out.replace(".csv", "_blocks.csv")
    weights = args.out.replace(".csv", "_weights.csv")
    code = cli(["sweep", *common, "--ablations", "full,no_eigen_gcfr,no_gcfr,no_residual,no_color,no_cbl,no_multistage",
                "--out", blocks])
    code = code or cli(["sweep", *common, "--lambda1", "0.1", "--lambda2", "0.1,0.2,0.3", "--out", weights])
    print(f"wrote {blocks} and {weights}")
    sys.exit(code)


if __name__ == "__main__":
    main()

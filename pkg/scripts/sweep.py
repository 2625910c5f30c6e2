"""Private-class F1 over a k_v x k_p grid, cross-validated inside the estimate set.

    python scripts/sweep.py --k-v 10 50 100 500 --k-p 10 50 100 --csv sweep.csv
"""

import argparse

from dmfp.config import load_config
from dmfp.experiments import run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="TOML run configuration")
    ap.add_argument("--k-v", type=int, nargs="+", help="visual neighborhood sizes")
    ap.add_argument("--k-p", type=int, nargs="+", help="privacy neighborhood sizes")
    ap.add_argument("--folds", type=int, help="cross-validation folds")
    ap.add_argument("--csv", help="write the grid here")
    args = ap.parse_args()

    cfg = load_config(args.config)
    res = run_sweep(cfg, k_v=args.k_v, k_p=args.k_p, folds=args.folds)
    text = res.to_csv()
    print(text, end="")
    kv, kp, f1 = res.best
    print(f"best: k_v={kv} k_p={kp} private F1={f1:.4f}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as f:
            f.write(text)


if __name__ == "__main__":
    main()

"""Temperature, lambda and projector-width sweeps on the synthetic benchmark.

Writes one long-form sweep.csv per parameter (param_value, metric, epoch, value).

    python3 scripts/ablations.py --out-dir runs/ablations --workers 1
"""

import argparse
from pathlib import Path

from dimcl.benchmarks import synthetic_benchmark
from dimcl.experiment import sweep

GRIDS = {
    "tau": ["0.05", "0.1", "0.2", "0.5", "1.0"],
    "lambda": ["0", "0.05", "0.1", "0.3", "0.5", "1"],
    "dim": ["64", "128", "256", "512"],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--params", nargs="+", default=list(GRIDS), choices=list(GRIDS))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out-dir", default="runs/ablations")
    args = ap.parse_args()

    for param in args.params:
        base = synthetic_benchmark(args.seed, out_dir=str(Path(args.out_dir) / param), epochs=args.epochs)
        res = sweep(base, param, GRIDS[param], workers=args.workers)
        print(f"== {param}")
        for value, rep in zip(res.values, res.reports):
            f = rep.final
            print(f"  {param}={value}: diversity {f.feature_diversity:.4f}  probe {f.probe_acc:.2f}  knn {f.knn_acc:.2f}")


if __name__ == "__main__":
    main()

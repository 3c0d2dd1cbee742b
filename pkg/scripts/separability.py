"""Sweep data seeds at malware intensity 1 and 0 and print per-model AUC.

The intensity-1 column should sit near 1 and the intensity-0 column near 0.5.
Usage: python scripts/separability.py [--seeds 0 1 2] [--n 10] [--models gnb,knn]
"""

import argparse
import time

from cloudmw.models import DEFAULT_MODELS
from cloudmw.pipeline import run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--models", default=",".join(k for k in DEFAULT_MODELS if k != "cnn"))
    args = p.parse_args()
    kinds = tuple(args.models.split(","))
    print(f"{'seed':>4} {'model':>5} {'auc@1':>7} {'auc@0':>7}")
    for seed in args.seeds:
        t0 = time.perf_counter()
        res = {i: {r.model: r.roc.auc for r in run(args.n, seed, i, kinds).results} for i in (1.0, 0.0)}
        for name in res[1.0]:
            print(f"{seed:>4} {name:>5} {res[1.0][name]:7.3f} {res[0.0][name]:7.3f}")
        print(f"# seed {seed} took {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()

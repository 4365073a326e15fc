"""Nonlinear minus linearized extended solution for data of size eps."""
import argparse
import csv
from pathlib import Path

import numpy as np

from stefan_control.experiments import deviation_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--T", type=float, default=2.0)
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    st = deviation_study(T=args.T, eps=tuple(np.logspace(-1, -4, 7)))
    with open(args.out / "quadratic_remainder.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "deviation"])
        w.writerows(zip(st.eps, st.deviations))
    for e, d in zip(st.eps, st.deviations):
        print(f"eps={e:.2e}  deviation={d:.3e}")
    print("local slopes", [f"{s:.2f}" for s in st.slopes])


if __name__ == "__main__":
    main()

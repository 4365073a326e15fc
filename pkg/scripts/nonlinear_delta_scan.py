"""Outer-iteration behaviour of the nonlinear control loop as the initial perturbation grows."""
import argparse
import csv
from pathlib import Path

from stefan_control.errors import StefanControlError
from stefan_control.experiments import nonlinear_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--T", type=float, default=2.0)
    ap.add_argument("--n", type=int, default=21)
    ap.add_argument("--m", type=int, default=200)
    ap.add_argument("--deltas", type=float, nargs="*", default=[2.5e-3, 5e-3, 1e-2, 2e-2, 4e-2, 8e-2])
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for d in args.deltas:
        try:
            st = nonlinear_study(d, args.n, args.m, args.T)
        except StefanControlError as exc:
            print(f"delta={d:<8g} failed: {type(exc).__name__}: {exc}")
            rows.append([d, "", "", "", "", "", "", type(exc).__name__])
            continue
        h = st.history
        second = h[1] if len(h) > 1 else 0.0
        print(f"delta={d:<8g} iterations={st.iterations:<3} front gap {st.ell_gap:.1e}  u gap {st.u_gap:.1e}"
              f"  min v {st.min_v:.3f}  first corrections {h[0]:.2e} {second:.2e}")
        rows.append([d, st.iterations, st.ell_gap, st.u_gap, st.min_v, h[0], second, "ok"])
    with open(args.out / "nonlinear_delta_scan.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "iterations", "front_gap", "u_gap", "min_v", "pass0", "pass1", "status"])
        w.writerows(rows)


if __name__ == "__main__":
    main()

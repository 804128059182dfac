"""Run the reference grid and print seed-averaged coverage per intensity.

    python3 scripts/run_reference_grid.py [--config configs/reference.ini] [--out runs/reference]
"""

import argparse
import sys
from pathlib import Path

from bayes_conformal.harness import cli
from bayes_conformal.harness.report import read_report_csv


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/reference.ini")
    ap.add_argument("--out", default="runs/reference")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    code = cli.main(["run-all", "--config", args.config, "--out", args.out, "--jobs", str(args.jobs)])
    if code:
        return code
    rows = read_report_csv(Path(args.out) / "report.csv")
    cells: dict = {}
    for r in rows:
        cells.setdefault((r["method"], r["alpha"], r["set_method"], r["intensity"]), []).append(r)
    methods = sorted({k[0] for k in cells}, key=[r["method"] for r in rows].index)
    alphas = sorted({k[1] for k in cells}, reverse=True)
    intensities = sorted({k[3] for k in cells})
    for m in methods:
        for a in alphas:
            print(f"\n{m}  alpha={a}   coverage (avg set size) by shift intensity")
            print("set   " + "".join(f"{i:>16d}" for i in intensities))
            for sm in ("cred", "thr", "aps"):
                line = f"{sm:<6}"
                for i in intensities:
                    rs = cells.get((m, a, sm, i), [])
                    if rs:
                        cov = sum(r["coverage"] for r in rs) / len(rs)
                        size = sum(r["avg_set_size"] for r in rs) / len(rs)
                        line += f"{cov:>9.3f} ({size:4.2f})"
                print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Report files: per-seed CSV, seed-averaged CSV and a JSON summary."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from bayes_conformal.harness.metrics import confidence_verdict
from bayes_conformal.harness.runner import (
    REPORT_COLUMNS,
    ExperimentReport,
    mean_calibration_stats,
    mean_rows,
)

REPORT_CSV = "report.csv"
MEAN_CSV = "report_mean.csv"
SUMMARY_JSON = "summary.json"

_INT_COLUMNS = {"intensity", "n_test", "eval_seed", "n_eval_seeds"}
_STR_COLUMNS = {"method", "set_method", "shift_kind"}


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, columns, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def read_report_csv(path) -> list:
    rows = []
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({
                k: (v if k in _STR_COLUMNS else int(v) if k in _INT_COLUMNS else float(v))
                for k, v in r.items()
            })
    return rows


def aggregate_diagnoses(report: ExperimentReport) -> list:
    groups: dict = {}
    for d in report.diagnoses:
        groups.setdefault((d["method"], d["alpha"]), []).append(d)
    out = []
    for (method, alpha), ds in groups.items():
        cov = float(np.mean([d["credible_coverage_on_cal"] for d in ds]))
        n_cal = ds[0]["n_cal"]
        out.append({
            "method": method,
            "alpha": alpha,
            "credible_coverage_on_cal": cov,
            "verdict": confidence_verdict(cov, alpha, n_cal),
            "n_cal": n_cal,
            "per_seed": [
                {"eval_seed": d["eval_seed"], "credible_coverage_on_cal": d["credible_coverage_on_cal"], "verdict": d["verdict"]}
                for d in ds
            ],
        })
    return out


def summary_dict(report: ExperimentReport) -> dict:
    return {
        "config_hash": report.config_hash,
        "n_rows": len(report.rows),
        "columns": list(REPORT_COLUMNS),
        "diagnoses": aggregate_diagnoses(report),
        "calibration_set": mean_calibration_stats(report),
        "calibration_set_per_seed": report.calibration_stats,
        "empty_set_rate_max": max((r["empty_set_rate"] for r in report.rows), default=0.0),
    }


def write_report(report: ExperimentReport, out_dir) -> dict:
    """Write the three report files into ``out_dir``; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / REPORT_CSV, "mean": out / MEAN_CSV, "summary": out / SUMMARY_JSON}
    _write_csv(paths["report"], REPORT_COLUMNS, report.rows)
    means = mean_rows(report)
    if means:
        _write_csv(paths["mean"], list(means[0].keys()), means)
    paths["summary"].write_text(json.dumps(summary_dict(report), indent=2, sort_keys=True) + "\n")
    return paths

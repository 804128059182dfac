"""Command line entry point.

Every stage reads and writes under the output directory::

    resolved_config.ini
    data/{train,val,pool}.csv, data/pool__<kind>__<intensity>.csv
    checkpoints/<method>.ckpt
    calibration/<method>.json
    report.csv, report_mean.csv, summary.json
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from bayes_conformal.conformal import ConformalCalibration
from bayes_conformal.data import load_csv, save_csv
from bayes_conformal.harness.config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    resolved_config_text,
    with_overrides,
)
from bayes_conformal.harness.metrics import ConfidenceDiagnosis
from bayes_conformal.harness.report import aggregate_diagnoses, write_report
from bayes_conformal.harness.runner import (
    ExperimentReport,
    PreparedData,
    assemble_report,
    calibrate_method,
    network_spec,
    predict_variants,
    prepare_data,
    train_all,
    variant_keys,
)
from bayes_conformal.inference import TrainingError, load_posterior, save_posterior

log = logging.getLogger("bayes_conformal")


class StageError(RuntimeError):
    pass


def _variant_file(key) -> str:
    kind, intensity = key
    return "pool.csv" if kind == "none" else f"pool__{kind}__{intensity}.csv"


def generate_data(cfg: ExperimentConfig, out: Path) -> PreparedData:
    data = prepare_data(cfg)
    ddir = out / "data"
    ddir.mkdir(parents=True, exist_ok=True)
    save_csv(data.train, ddir / "train.csv")
    save_csv(data.val, ddir / "val.csv")
    for key, ds in data.variants.items():
        save_csv(ds, ddir / _variant_file(key))
    (ddir / "meta.json").write_text(json.dumps({"n_cal": data.n_cal}, indent=2) + "\n")
    return data


def load_data(cfg: ExperimentConfig, out: Path) -> PreparedData:
    ddir = out / "data"
    if not (ddir / "meta.json").exists():
        raise StageError(f"no data under {ddir}; run generate-data first")
    variants = {key: load_csv(ddir / _variant_file(key)) for key in variant_keys(cfg)}
    meta = json.loads((ddir / "meta.json").read_text())
    return PreparedData(
        load_csv(ddir / "train.csv"), load_csv(ddir / "val.csv"), variants[("none", 0)], variants, meta["n_cal"]
    )


def train(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    data = load_data(cfg, out)
    posts = train_all(cfg, data, jobs)
    cdir = out / "checkpoints"
    cdir.mkdir(parents=True, exist_ok=True)
    spec = network_spec(cfg)
    for m in cfg.methods:
        save_posterior(cdir / f"{m.name}.ckpt", posts[m.name], spec, seed=m.train.seed)
    return posts


def load_posteriors(cfg: ExperimentConfig, out: Path) -> dict:
    posts = {}
    for m in cfg.methods:
        path = out / "checkpoints" / f"{m.name}.ckpt"
        if not path.exists():
            raise StageError(f"missing checkpoint {path}; run train first")
        posts[m.name], _, _ = load_posterior(path)
    return posts


def calibrate(cfg: ExperimentConfig, out: Path) -> dict:
    data = load_data(cfg, out)
    posts = load_posteriors(cfg, out)
    cdir = out / "calibration"
    cdir.mkdir(parents=True, exist_ok=True)
    result = {}
    for m in cfg.methods:
        probs = predict_variants(cfg, m, posts[m.name], data)
        cal = calibrate_method(cfg, probs, data)
        result[m.name] = cal
        doc = {
            "method": m.name,
            "calibrations": [
                {"alpha": a, "eval_seed": s, "calibration": json.loads(c.to_json())}
                for (a, s, _), c in cal["calibrations"].items()
            ],
            "diagnoses": [
                {"eval_seed": s, **d.to_dict()} for (_, s), d in cal["diagnoses"].items()
            ],
        }
        (cdir / f"{m.name}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return result


def load_calibrations(cfg: ExperimentConfig, out: Path) -> dict:
    result = {}
    for m in cfg.methods:
        path = out / "calibration" / f"{m.name}.json"
        if not path.exists():
            raise StageError(f"missing calibration {path}; run calibrate first")
        doc = json.loads(path.read_text())
        cals = {}
        for entry in doc["calibrations"]:
            c = ConformalCalibration.from_json(json.dumps(entry["calibration"]))
            cals[(c.alpha, entry["eval_seed"], c.score_kind)] = c
        diags = {
            (d["alpha"], d["eval_seed"]): ConfidenceDiagnosis(
                d["credible_coverage_on_cal"], d["verdict"], d["alpha"], d["n_cal"]
            )
            for d in doc["diagnoses"]
        }
        result[m.name] = {"calibrations": cals, "diagnoses": diags}
    return result


def evaluate(cfg: ExperimentConfig, out: Path) -> ExperimentReport:
    data = load_data(cfg, out)
    posts = load_posteriors(cfg, out)
    report = assemble_report(cfg, posts, data, load_calibrations(cfg, out))
    write_report(report, out)
    return report


def diagnose(cfg: ExperimentConfig, out: Path) -> list:
    data = load_data(cfg, out)
    posts = load_posteriors(cfg, out)
    report = ExperimentReport(rows=[])
    for m in cfg.methods:
        probs = predict_variants(cfg, m, posts[m.name], data)
        for (alpha, seed), d in calibrate_method(cfg, probs, data)["diagnoses"].items():
            report.diagnoses.append({"method": m.name, "eval_seed": seed, **d.to_dict()})
    rows = aggregate_diagnoses(report)
    (out / "diagnosis.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return rows


def run_all(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> ExperimentReport:
    generate_data(cfg, out)
    train(cfg, out, jobs)
    calibrate(cfg, out)
    return evaluate(cfg, out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayes-conformal",
        description="Split conformal prediction over Bayesian neural-network posteriors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("generate-data", "generate the blob dataset, split it and write shifted copies"),
        ("train", "train every configured method and write checkpoints"),
        ("calibrate", "fit conformal thresholds per method, alpha and eval seed"),
        ("evaluate", "score all set methods and write the reports"),
        ("run-all", "generate-data, train, calibrate and evaluate in one go"),
        ("diagnose", "report over/under-confidence of each method on the calibration set"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="experiment config file")
        p.add_argument("--seed", type=int, default=None, help="override every method's training seed")
        p.add_argument("--alpha", type=float, action="append", default=None, help="error tolerance (repeatable)")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
        p.add_argument("--jobs", type=int, default=1, help="parallel training jobs")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        cfg = with_overrides(load_config(args.config), seed=args.seed, alphas=args.alpha, output_dir=args.out)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.ini").write_text(resolved_config_text(cfg))
        if args.command == "generate-data":
            data = generate_data(cfg, out)
            log.info("wrote %d train / %d val / %d pool rows to %s", len(data.train), len(data.val), len(data.pool), out / "data")
        elif args.command == "train":
            train(cfg, out, args.jobs)
            log.info("wrote %d checkpoints to %s", len(cfg.methods), out / "checkpoints")
        elif args.command == "calibrate":
            calibrate(cfg, out)
            log.info("wrote calibrations to %s", out / "calibration")
        elif args.command == "evaluate":
            report = evaluate(cfg, out)
            log.info("wrote %d report rows to %s", len(report.rows), out)
        elif args.command == "run-all":
            report = run_all(cfg, out, args.jobs)
            log.info("wrote %d report rows to %s", len(report.rows), out)
        elif args.command == "diagnose":
            for row in diagnose(cfg, out):
                log.info(
                    "%-12s alpha=%-5g credible coverage on cal = %.4f -> %s",
                    row["method"], row["alpha"], row["credible_coverage_on_cal"], row["verdict"],
                )
    except (ConfigError, StageError, TrainingError, OSError) as err:
        log.error("error: %s", err)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

from bayes_conformal.harness.config import ExperimentConfig, MethodConfig, load_config, parse_config
from bayes_conformal.harness.metrics import (
    ConfidenceDiagnosis,
    avg_set_size,
    binomial_se,
    coverage,
    diagnose_confidence,
    empty_set_rate,
)
from bayes_conformal.harness.report import read_report_csv, write_report
from bayes_conformal.harness.runner import ExperimentReport, run_experiment

__all__ = [
    "ConfidenceDiagnosis",
    "ExperimentConfig",
    "ExperimentReport",
    "MethodConfig",
    "avg_set_size",
    "binomial_se",
    "coverage",
    "diagnose_confidence",
    "empty_set_rate",
    "load_config",
    "parse_config",
    "read_report_csv",
    "run_experiment",
    "write_report",
]

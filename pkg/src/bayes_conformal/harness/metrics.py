"""Coverage and set-size measures, and the over/under-confidence diagnosis."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from bayes_conformal.conformal import credible_set


def _masks(sets) -> np.ndarray:
    m = np.asarray(sets, dtype=bool)
    if m.ndim != 2 or m.shape[0] == 0:
        raise ValueError("expected a non-empty (n, K) array of set masks")
    return m


def coverage(sets, labels) -> float:
    """Fraction of sets that contain their true label."""
    m = _masks(sets)
    labels = np.asarray(labels)
    if labels.shape != (m.shape[0],):
        raise ValueError(f"{m.shape[0]} sets but {labels.size} labels")
    return float(m[np.arange(m.shape[0]), labels].mean())


def avg_set_size(sets) -> float:
    return float(_masks(sets).sum(axis=1).mean())


def empty_set_rate(sets) -> float:
    return float((~_masks(sets).any(axis=1)).mean())


def binomial_se(p: float, n: int) -> float:
    return float(np.sqrt(max(p * (1.0 - p), 0.0) / n))


@dataclass(frozen=True)
class ConfidenceDiagnosis:
    credible_coverage_on_cal: float
    verdict: str
    alpha: float
    n_cal: int

    def to_dict(self) -> dict:
        return asdict(self)


def confidence_verdict(cov: float, alpha: float, n_cal: int) -> str:
    if cov < 1.0 - alpha:
        return "overconfident"
    if cov > 1.0 - alpha + 1.0 / (n_cal + 1):
        return "underconfident"
    return "within_band"


def diagnose_confidence(probs_cal, labels_cal, alpha: float, n_cal: Optional[int] = None) -> ConfidenceDiagnosis:
    """Compare credible-set coverage on the calibration set to the conformal band.

    Below ``1 - alpha`` the model is overconfident, above
    ``1 - alpha + 1/(n_cal + 1)`` underconfident.
    """
    probs_cal = np.asarray(probs_cal, dtype=np.float64)
    if probs_cal.ndim != 2 or probs_cal.shape[0] == 0:
        raise ValueError("need a non-empty (n, K) array of calibration outputs")
    n_cal = probs_cal.shape[0] if n_cal is None else int(n_cal)
    cov = coverage(credible_set(probs_cal, alpha), labels_cal)
    return ConfidenceDiagnosis(cov, confidence_verdict(cov, alpha, n_cal), alpha, n_cal)

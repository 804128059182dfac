"""Credible sets and split-conformal prediction sets (thr and aps scores).

Prediction sets are boolean membership masks over the K labels: shape
``(K,)`` for one input, ``(n, K)`` for a batch. Probability ties are
broken by ascending label index everywhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

SCORE_KINDS = ("thr", "aps")


def _descending_order(p: np.ndarray) -> np.ndarray:
    # stable sort on -p keeps lower labels first among equal probabilities
    return np.argsort(-p, axis=-1, kind="stable")


def _as_probs(p) -> tuple[np.ndarray, bool]:
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    return (p[None, :] if single else p), single


def credible_set(p, alpha: float) -> np.ndarray:
    """Top labels until the cumulative mass strictly exceeds ``1 - alpha``.

    Never empty. If rounding keeps the total from exceeding ``1 - alpha``
    the full label set is returned.
    """
    P, single = _as_probs(p)
    n, K = P.shape
    order = _descending_order(P)
    cum = np.cumsum(np.take_along_axis(P, order, axis=1), axis=1)
    exceeds = cum > 1.0 - alpha
    size = np.where(exceeds.any(axis=1), exceeds.argmax(axis=1) + 1, K)
    in_sorted = np.arange(K)[None, :] < size[:, None]
    mask = np.zeros_like(in_sorted)
    np.put_along_axis(mask, order, in_sorted, axis=1)
    return mask[0] if single else mask


def thr_score(p, y):
    """``1 - p[y]``; vectorizes over a batch of ``p`` rows and labels."""
    P, single = _as_probs(p)
    y = np.atleast_1d(np.asarray(y))
    s = 1.0 - P[np.arange(P.shape[0]), y]
    return float(s[0]) if single else s


def aps_all_scores(P: np.ndarray, u: np.ndarray) -> np.ndarray:
    """APS score of every candidate label, ``(n, K)``.

    Score of label y is the mass ranked strictly above it plus ``u * p[y]``,
    with one ``u`` per row.
    """
    order = _descending_order(P)
    sorted_p = np.take_along_axis(P, order, axis=1)
    above = np.cumsum(sorted_p, axis=1) - sorted_p
    sorted_scores = above + np.asarray(u, dtype=np.float64)[:, None] * sorted_p
    # the total mass can round to 1 + eps; the score never exceeds 1
    sorted_scores = np.minimum(sorted_scores, 1.0)
    scores = np.empty_like(P)
    np.put_along_axis(scores, order, sorted_scores, axis=1)
    return scores


def aps_score(p, y, u):
    P, single = _as_probs(p)
    u = np.broadcast_to(np.asarray(u, dtype=np.float64), (P.shape[0],))
    y = np.atleast_1d(np.asarray(y))
    s = aps_all_scores(P, u)[np.arange(P.shape[0]), y]
    return float(s[0]) if single else s


def conformal_quantile(scores, alpha: float) -> float:
    """k-th smallest score with ``k = ceil((n + 1)(1 - alpha))``; ``inf`` if k > n."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    n = s.size
    if n == 0:
        raise ValueError("need at least one calibration score")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    k = quantile_rank(n, alpha)
    if k > n:
        return math.inf
    return float(np.partition(s, k - 1)[k - 1])


def quantile_rank(n: int, alpha: float) -> int:
    # (n + 1)(1 - alpha) can land a hair above an integer in floating point,
    # e.g. 10 * 0.9; round to 12 decimals before taking the ceiling
    return int(math.ceil(round((n + 1) * (1.0 - alpha), 12)))


@dataclass(frozen=True)
class ConformalCalibration:
    tau: float
    alpha: float
    n_cal: int
    score_kind: str
    seed: Optional[int] = None

    def __post_init__(self):
        if self.score_kind not in SCORE_KINDS:
            raise ValueError(f"score_kind must be one of {SCORE_KINDS}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if quantile_rank(self.n_cal, self.alpha) > self.n_cal and not math.isinf(self.tau):
            raise ValueError("calibration set too small for alpha: tau must be +inf")

    def to_json(self) -> str:
        d = asdict(self)
        d["tau"] = "inf" if math.isinf(self.tau) else self.tau
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ConformalCalibration":
        d = json.loads(text)
        d["tau"] = math.inf if d["tau"] == "inf" else float(d["tau"])
        return cls(**d)


def calibration_scores(probs, labels, kind: str, seed: Optional[int] = None) -> np.ndarray:
    P, _ = _as_probs(probs)
    labels = np.asarray(labels)
    if P.shape[0] != labels.shape[0]:
        raise ValueError(f"{P.shape[0]} probability rows but {labels.shape[0]} labels")
    if kind == "thr":
        return thr_score(P, labels)
    if kind == "aps":
        u = np.random.default_rng(seed).uniform(size=P.shape[0])
        return aps_score(P, labels, u)
    raise ValueError(f"unknown score kind {kind!r}")


def calibrate(probs, labels, alpha: float, kind: str, seed: Optional[int] = None) -> ConformalCalibration:
    """Fit the conformal threshold on held-out calibration outputs.

    For ``aps`` one uniform per calibration example is drawn from
    ``default_rng(seed)``.
    """
    scores = calibration_scores(probs, labels, kind, seed)
    if scores.size == 0:
        raise ValueError("empty calibration set")
    tau = conformal_quantile(scores, alpha)
    return ConformalCalibration(tau, alpha, int(scores.size), kind, seed)


def predict_set(p, cal: ConformalCalibration, rng: Optional[np.random.Generator] = None, u=None) -> np.ndarray:
    """Conformal prediction set(s) for probability vector(s) ``p``.

    For ``aps`` each input gets one uniform draw shared by all of its
    candidate labels, taken from ``rng`` unless passed explicitly as ``u``.
    """
    P, single = _as_probs(p)
    n, K = P.shape
    if math.isinf(cal.tau):
        mask = np.ones((n, K), dtype=bool)
    elif cal.score_kind == "thr":
        mask = (1.0 - P) <= cal.tau
    else:
        if u is None:
            if rng is None:
                raise ValueError("aps prediction needs an rng or explicit uniforms")
            u = rng.uniform(size=n)
        u = np.broadcast_to(np.asarray(u, dtype=np.float64), (n,))
        mask = aps_all_scores(P, u) <= cal.tau
    return mask[0] if single else mask


def set_members(mask) -> list:
    """Sorted label list(s) from membership mask(s)."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim == 1:
        return np.flatnonzero(m).tolist()
    return [np.flatnonzero(row).tolist() for row in m]

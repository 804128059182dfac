"""Experiment grid: train each method once, then for every eval seed resample
the calibration split, calibrate, and score all set methods on the
in-distribution test points and every shifted copy of them.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from bayes_conformal import conformal
from bayes_conformal.data import SyntheticDataset, apply_shift, make_blobs, split_indices
from bayes_conformal.harness.config import ExperimentConfig, MethodConfig, config_hash
from bayes_conformal.harness.metrics import avg_set_size, coverage, diagnose_confidence, empty_set_rate
from bayes_conformal.inference import (
    TrainingError,
    fit_laplace_last_layer,
    posterior_predictive,
    run_sghmc,
    train_ensemble,
    train_map,
    train_mfvi,
)
from bayes_conformal.inference.posteriors import PosteriorApproximation
from bayes_conformal.nn_core import NetworkSpec

log = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "method",
    "set_method",
    "alpha",
    "shift_kind",
    "intensity",
    "coverage",
    "avg_set_size",
    "accuracy",
    "empty_set_rate",
    "n_test",
    "eval_seed",
)

# stream tag mixed into aps prediction seeds so they never coincide with
# the calibration draws
_PREDICT_STREAM = 104729


@dataclass
class PreparedData:
    train: SyntheticDataset
    val: SyntheticDataset
    # union of the split's calibration and test parts; every eval seed
    # re-partitions it into n_cal calibration points and the rest for testing
    pool: SyntheticDataset
    variants: dict
    n_cal: int


@dataclass
class ExperimentReport:
    rows: list
    diagnoses: list = field(default_factory=list)
    calibration_stats: list = field(default_factory=list)
    config_hash: str = ""

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def select(self, **where) -> list:
        return [r for r in self.rows if all(r[k] == v for k, v in where.items())]


def network_spec(cfg: ExperimentConfig) -> NetworkSpec:
    return NetworkSpec((cfg.data.dim, *cfg.hidden, cfg.data.n_classes), cfg.activation)


def variant_keys(cfg: ExperimentConfig) -> list:
    return [("none", 0)] + [(k, i) for k in cfg.shift.kinds for i in cfg.shift.intensities]


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    d = cfg.data
    ds = make_blobs(d.n_classes, d.dim, d.n, d.class_sep, d.within_std, d.seed)
    train_idx, val_idx, cal_idx, test_idx = split_indices(len(ds), cfg.split)
    pool = ds.subset(np.sort(np.concatenate([cal_idx, test_idx])))
    n_cal = len(cal_idx) if cfg.n_cal is None else cfg.n_cal
    if not 1 <= n_cal < len(pool):
        raise ValueError(f"n_cal={n_cal} must be in [1, {len(pool)})")
    variants = {("none", 0): pool}
    for kind, intensity in variant_keys(cfg)[1:]:
        variants[(kind, intensity)] = apply_shift(pool, kind, intensity, cfg.shift.params)
    return PreparedData(ds.subset(train_idx), ds.subset(val_idx), pool, variants, n_cal)


def eval_partition(n_pool: int, n_cal: int, eval_seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(eval_seed).permutation(n_pool)
    return np.sort(perm[:n_cal]), np.sort(perm[n_cal:])


def train_method(spec: NetworkSpec, m: MethodConfig, train: SyntheticDataset, val: SyntheticDataset) -> PosteriorApproximation:
    tb, vb = train.batch, val.batch
    try:
        if m.engine == "map":
            return train_map(spec, tb, m.train, val=vb)
        if m.engine == "ensemble":
            return train_ensemble(spec, tb, m.train, m.ensemble_size, val=vb)
        if m.engine == "mfvi":
            return train_mfvi(spec, tb, m.train, m.init_sigma, m.n_train_samples, val=vb)
        if m.engine == "sghmc":
            return run_sghmc(spec, tb, m.train)
        point = train_map(spec, tb, m.train, val=vb)
        return fit_laplace_last_layer(spec, point.weights, tb, m.train.prior)
    except TrainingError as err:
        raise TrainingError(f"method {m.name!r} ({m.engine}): {err}") from err


def _train_job(args):
    spec, m, train, val = args
    return train_method(spec, m, train, val)


def train_all(cfg: ExperimentConfig, data: PreparedData, jobs: int = 1) -> dict:
    spec = network_spec(cfg)
    tasks = [(spec, m, data.train, data.val) for m in cfg.methods]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            posts = list(pool.map(_train_job, tasks))
    else:
        posts = [_train_job(t) for t in tasks]
    return {m.name: p for m, p in zip(cfg.methods, posts)}


def predict_variants(cfg: ExperimentConfig, m: MethodConfig, post, data: PreparedData) -> dict:
    """Predictive probabilities for every pool variant, keyed like ``data.variants``."""
    spec = network_spec(cfg)
    return {
        key: posterior_predictive(
            post, spec, ds.inputs, n_samples=m.predictive_samples, seed=m.train.seed, temperature=m.temperature
        )
        for key, ds in data.variants.items()
    }


def calibrate_method(cfg: ExperimentConfig, probs: dict, data: PreparedData) -> dict:
    """Thresholds keyed by ``(alpha, eval_seed, score_kind)`` plus diagnoses."""
    labels = data.pool.labels
    cals, diags = {}, {}
    for alpha in cfg.alphas:
        for seed in cfg.eval_seeds:
            cal_idx, _ = eval_partition(len(labels), data.n_cal, seed)
            p_cal, y_cal = probs[("none", 0)][cal_idx], labels[cal_idx]
            diags[(alpha, seed)] = diagnose_confidence(p_cal, y_cal, alpha)
            for kind in conformal.SCORE_KINDS:
                if kind in cfg.set_methods:
                    cals[(alpha, seed, kind)] = conformal.calibrate(p_cal, y_cal, alpha, kind, seed=seed)
    return {"calibrations": cals, "diagnoses": diags}


def _sets(set_method: str, P: np.ndarray, alpha: float, cal, rng_key) -> np.ndarray:
    if set_method == "cred":
        return conformal.credible_set(P, alpha)
    rng = np.random.default_rng(rng_key)
    return conformal.predict_set(P, cal, rng)


def evaluate_method(cfg: ExperimentConfig, name: str, probs: dict, data: PreparedData, calibration: dict) -> tuple:
    """Report rows, calibration-set stats and diagnoses for one trained method."""
    labels = data.pool.labels
    keys = variant_keys(cfg)
    rows, cal_stats, diag_rows = [], [], []
    for ai, alpha in enumerate(cfg.alphas):
        for seed in cfg.eval_seeds:
            cal_idx, test_idx = eval_partition(len(labels), data.n_cal, seed)
            diag = calibration["diagnoses"][(alpha, seed)]
            diag_rows.append({"method": name, "alpha": alpha, "eval_seed": seed, **diag.to_dict()})
            p_cal, y_cal = probs[("none", 0)][cal_idx], labels[cal_idx]
            for sm in cfg.set_methods:
                cal = calibration["calibrations"].get((alpha, seed, sm))
                sets = _sets(sm, p_cal, alpha, cal, [seed, ai, _PREDICT_STREAM, len(keys)])
                cal_stats.append({
                    "method": name,
                    "set_method": sm,
                    "alpha": alpha,
                    "eval_seed": seed,
                    "tau": None if cal is None else (("inf" if np.isinf(cal.tau) else cal.tau)),
                    "coverage": coverage(sets, y_cal),
                    "avg_set_size": avg_set_size(sets),
                })
            for vi, key in enumerate(keys):
                P, y = probs[key][test_idx], labels[test_idx]
                acc = float(np.mean(np.argmax(P, axis=1) == y))
                for sm in cfg.set_methods:
                    cal = calibration["calibrations"].get((alpha, seed, sm))
                    sets = _sets(sm, P, alpha, cal, [seed, ai, _PREDICT_STREAM, vi])
                    rows.append({
                        "method": name,
                        "set_method": sm,
                        "alpha": alpha,
                        "shift_kind": key[0],
                        "intensity": key[1],
                        "coverage": coverage(sets, y),
                        "avg_set_size": avg_set_size(sets),
                        "accuracy": acc,
                        "empty_set_rate": empty_set_rate(sets),
                        "n_test": int(y.size),
                        "eval_seed": seed,
                    })
    return rows, cal_stats, diag_rows


def sort_rows(cfg: ExperimentConfig, rows: list) -> list:
    m_idx = {m.name: i for i, m in enumerate(cfg.methods)}
    s_idx = {s: i for i, s in enumerate(cfg.set_methods)}
    a_idx = {a: i for i, a in enumerate(cfg.alphas)}
    v_idx = {k: i for i, k in enumerate(variant_keys(cfg))}
    e_idx = {s: i for i, s in enumerate(cfg.eval_seeds)}
    return sorted(
        rows,
        key=lambda r: (
            m_idx[r["method"]],
            s_idx[r["set_method"]],
            a_idx[r["alpha"]],
            v_idx[(r["shift_kind"], r["intensity"])],
            e_idx[r["eval_seed"]],
        ),
    )


def assemble_report(cfg: ExperimentConfig, posts: dict, data: PreparedData, calibrations: Optional[dict] = None) -> ExperimentReport:
    rows, cal_stats, diags = [], [], []
    for m in cfg.methods:
        probs = predict_variants(cfg, m, posts[m.name], data)
        cal = calibrations[m.name] if calibrations is not None else calibrate_method(cfg, probs, data)
        r, c, d = evaluate_method(cfg, m.name, probs, data, cal)
        rows += r
        cal_stats += c
        diags += d
    return ExperimentReport(sort_rows(cfg, rows), diags, cal_stats, config_hash(cfg))


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, posteriors: Optional[dict] = None) -> ExperimentReport:
    """Full grid in memory. Pre-trained ``posteriors`` (by method name) skip training."""
    data = prepare_data(cfg)
    posts = posteriors if posteriors is not None else train_all(cfg, data, jobs)
    return assemble_report(cfg, posts, data)


def mean_rows(report: ExperimentReport) -> list:
    """Average each grid cell over eval seeds (sample std with ddof=1)."""
    groups: dict = {}
    for r in report.rows:
        key = (r["method"], r["set_method"], r["alpha"], r["shift_kind"], r["intensity"])
        groups.setdefault(key, []).append(r)
    out = []
    for key, rs in groups.items():
        row = dict(zip(("method", "set_method", "alpha", "shift_kind", "intensity"), key))
        for metric in ("coverage", "avg_set_size", "accuracy", "empty_set_rate"):
            vals = np.array([r[metric] for r in rs])
            row[f"{metric}_mean"] = float(vals.mean())
            row[f"{metric}_sample_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        row["n_test"] = int(np.mean([r["n_test"] for r in rs]))
        row["n_eval_seeds"] = len(rs)
        out.append(row)
    return out


def mean_calibration_stats(report: ExperimentReport) -> list:
    groups: dict = {}
    for r in report.calibration_stats:
        groups.setdefault((r["method"], r["set_method"], r["alpha"]), []).append(r)
    return [
        {
            "method": k[0],
            "set_method": k[1],
            "alpha": k[2],
            "coverage_mean": float(np.mean([r["coverage"] for r in rs])),
            "avg_set_size_mean": float(np.mean([r["avg_set_size"] for r in rs])),
        }
        for k, rs in groups.items()
    ]

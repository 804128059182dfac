"""Seeded Gaussian-blob datasets, parameterized shifts, splits and CSV I/O."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from bayes_conformal.nn_core import LabeledBatch

SHIFT_KINDS = ("translate", "rotate", "gaussian_noise", "feature_scale")
MAX_INTENSITY = 5


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Provenance:
    seed: int
    shift_kind: str = "none"
    intensity: int = 0
    n_classes: int = 2
    class_sep: float = 1.0
    within_std: float = 1.0

    def __post_init__(self):
        if (self.intensity == 0) != (self.shift_kind == "none"):
            raise ValueError("intensity 0 must go with shift_kind 'none' and vice versa")
        if self.shift_kind != "none" and self.shift_kind not in SHIFT_KINDS:
            raise ValueError(f"unknown shift kind {self.shift_kind!r}")


@dataclass(frozen=True)
class SyntheticDataset:
    inputs: np.ndarray
    labels: np.ndarray
    provenance: Provenance
    # class means are kept so the Bayes-optimal classifier can be evaluated
    class_means: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("inputs must be (n, d) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.provenance.n_classes):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def batch(self) -> LabeledBatch:
        return LabeledBatch(self.inputs, self.labels)

    def subset(self, idx) -> "SyntheticDataset":
        return replace(self, inputs=self.inputs[idx], labels=self.labels[idx])


@dataclass(frozen=True)
class ShiftParams:
    """Per-unit-intensity shift magnitudes.

    ``None`` for ``translate_step`` / ``noise_std`` means a multiple of the
    dataset's within-class std (0.5x and 0.4x respectively).
    """

    translate_step: Optional[float] = None
    rotate_degrees: float = 10.0
    noise_std: Optional[float] = None
    scale_step: float = 0.15


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.5
    val: float = 0.1
    cal: float = 0.2
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = self.fractions
        if any(f <= 0 for f in fr):
            raise ValueError("split fractions must be positive")
        if not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)}")

    @property
    def fractions(self) -> tuple[float, float, float, float]:
        return (self.train, self.val, self.cal, self.test)


def _spread_means(K: int, d: int, radius: float, rng: np.random.Generator, n_candidates: int = 64) -> np.ndarray:
    # best-of-n random draws on the sphere, keeping the draw whose closest
    # pair of means is farthest apart
    best, best_gap = None, -1.0
    for _ in range(n_candidates):
        z = rng.standard_normal((K, d))
        z *= radius / np.linalg.norm(z, axis=1, keepdims=True)
        diff = z[:, None, :] - z[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        gap = dist[~np.eye(K, dtype=bool)].min()
        if gap > best_gap:
            best, best_gap = z, gap
    return best


def make_blobs(
    n_classes: int, dim: int, n: int, class_sep: float = 4.0, within_std: float = 1.0, seed: int = 0
) -> SyntheticDataset:
    """Balanced isotropic Gaussian blobs with means on a sphere of radius ``class_sep``."""
    if n_classes < 2 or dim < 2 or n < n_classes:
        raise ValueError("need n_classes >= 2, dim >= 2 and n >= n_classes")
    rng = np.random.default_rng(seed)
    means = _spread_means(n_classes, dim, class_sep, rng)
    labels = rng.permutation(np.arange(n) % n_classes)
    inputs = means[labels] + within_std * rng.standard_normal((n, dim))
    prov = Provenance(seed=seed, n_classes=n_classes, class_sep=class_sep, within_std=within_std)
    return SyntheticDataset(inputs, labels.astype(np.int64), prov, means)


def bayes_posterior(ds: SyntheticDataset, inputs: Optional[np.ndarray] = None) -> np.ndarray:
    """True class probabilities p(y | x) of the (unshifted) generating mixture."""
    if ds.class_means is None:
        raise ValueError("dataset does not carry its class means")
    x = ds.inputs if inputs is None else np.asarray(inputs, dtype=np.float64)
    sq = ((x[:, None, :] - ds.class_means[None, :, :]) ** 2).sum(-1)
    logits = -sq / (2.0 * ds.provenance.within_std**2)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def _shift_rng(prov: Provenance, kind: str, intensity: int, seed: Optional[int]) -> np.random.Generator:
    base = prov.seed if seed is None else seed
    return np.random.default_rng([base, SHIFT_KINDS.index(kind), intensity])


def apply_shift(
    ds: SyntheticDataset,
    kind: str,
    intensity: int,
    params: ShiftParams = ShiftParams(),
    seed: Optional[int] = None,
) -> SyntheticDataset:
    """Corrupt the inputs at an intensity in 1..5; labels are untouched.

    translate moves every input along ``(1, ..., 1) / sqrt(d)``; rotate turns
    the first two coordinates; gaussian_noise adds isotropic noise seeded
    from the dataset seed (or ``seed``); feature_scale multiplies all
    coordinates.
    """
    if kind not in SHIFT_KINDS:
        raise ValueError(f"unknown shift kind {kind!r}; choose from {SHIFT_KINDS}")
    if not (isinstance(intensity, (int, np.integer)) and 1 <= intensity <= MAX_INTENSITY):
        raise ValueError(f"shift intensity must be an integer in 1..{MAX_INTENSITY}, got {intensity!r}")
    x = ds.inputs.copy()
    std = ds.provenance.within_std
    if kind == "translate":
        step = 0.5 * std if params.translate_step is None else params.translate_step
        direction = np.ones(x.shape[1]) / math.sqrt(x.shape[1])
        x += intensity * step * direction
    elif kind == "rotate":
        theta = math.radians(intensity * params.rotate_degrees)
        c, s = math.cos(theta), math.sin(theta)
        x0, x1 = x[:, 0].copy(), x[:, 1].copy()
        x[:, 0] = c * x0 - s * x1
        x[:, 1] = s * x0 + c * x1
    elif kind == "gaussian_noise":
        s_unit = 0.4 * std if params.noise_std is None else params.noise_std
        x += intensity * s_unit * _shift_rng(ds.provenance, kind, intensity, seed).standard_normal(x.shape)
    else:
        x *= 1.0 + intensity * params.scale_step
    prov = replace(ds.provenance, shift_kind=kind, intensity=int(intensity))
    return replace(ds, inputs=x, provenance=prov)


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, ...]:
    perm = np.random.default_rng(spec.seed).permutation(n)
    bounds = np.round(np.cumsum(spec.fractions) * n).astype(int)
    bounds[-1] = n
    return tuple(np.sort(part) for part in np.split(perm, bounds[:-1]))


def split(ds: SyntheticDataset, spec: SplitSpec) -> tuple[SyntheticDataset, ...]:
    """Disjoint, exhaustive seeded (train, val, cal, test) partition."""
    return tuple(ds.subset(idx) for idx in split_indices(len(ds), spec))


def save_csv(ds: SyntheticDataset, path) -> None:
    """Write ``x0..x{d-1},label`` rows plus a ``<path>.json`` provenance sidecar."""
    path = Path(path)
    d = ds.inputs.shape[1]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(d)] + ["label"])
        for row, label in zip(ds.inputs, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
    side = {"provenance": asdict(ds.provenance)}
    if ds.class_means is not None:
        side["class_means"] = ds.class_means.tolist()
    _sidecar(path).write_text(json.dumps(side, indent=2, sort_keys=True))


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def load_csv(path) -> SyntheticDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}:1: empty file") from None
        if not header or header[-1] != "label":
            raise DataFormatError(f"{path}:1: missing 'label' column")
        expected = [f"x{j}" for j in range(len(header) - 1)]
        if header[:-1] != expected or not expected:
            raise DataFormatError(f"{path}:1: feature columns must be {','.join(expected) or 'x0..'}")
        d = len(expected)
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise DataFormatError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
            try:
                xs.append([float(v) for v in row[:-1]])
                ys.append(int(row[-1]))
            except ValueError as err:
                raise DataFormatError(f"{path}:{lineno}: {err}") from None
    side_path = _sidecar(path)
    means = None
    if side_path.exists():
        side = json.loads(side_path.read_text())
        prov = Provenance(**side["provenance"])
        if "class_means" in side:
            means = np.asarray(side["class_means"], dtype=np.float64)
    else:
        prov = Provenance(seed=0, n_classes=max(ys, default=0) + 1)
    inputs = np.asarray(xs, dtype=np.float64).reshape(-1, d)
    return SyntheticDataset(inputs, np.asarray(ys, dtype=np.int64), prov, means)

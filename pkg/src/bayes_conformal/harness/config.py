"""Experiment configuration and its INI-style file format.

Sections: ``[data]``, ``[split]``, ``[shift]``, ``[experiment]`` and one
``[method.<name>]`` per inference method. See README for every key.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from bayes_conformal.data import SHIFT_KINDS, ShiftParams, SplitSpec
from bayes_conformal.inference.config import SghmcConfig, TrainConfig
from bayes_conformal.nn_core import PriorSpec

ENGINES = ("map", "ensemble", "mfvi", "sghmc", "laplace")
SET_METHODS = ("cred", "thr", "aps")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n_classes: int = 5
    dim: int = 5
    n: int = 5000
    class_sep: float = 3.0
    within_std: float = 1.0
    seed: int = 1


@dataclass
class ShiftConfig:
    kinds: tuple = ("gaussian_noise",)
    intensities: tuple = (1, 2, 3, 4, 5)
    params: ShiftParams = field(default_factory=ShiftParams)


@dataclass
class MethodConfig:
    name: str
    engine: str
    train: Union[TrainConfig, SghmcConfig] = field(default_factory=TrainConfig)
    temperature: float = 1.0
    ensemble_size: int = 5
    init_sigma: float = 0.01
    n_train_samples: int = 1
    predictive_samples: int = 30

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"method {self.name!r}: engine must be one of {ENGINES}")
        if self.engine == "sghmc" and not isinstance(self.train, SghmcConfig):
            raise ConfigError(f"method {self.name!r}: sghmc needs an SghmcConfig")
        if self.temperature <= 0:
            raise ConfigError(f"method {self.name!r}: temperature must be positive")


@dataclass
class ExperimentConfig:
    methods: list
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitSpec = field(default_factory=lambda: SplitSpec(0.4, 0.1, 0.25, 0.25, seed=0))
    shift: ShiftConfig = field(default_factory=ShiftConfig)
    alphas: tuple = (0.05, 0.01)
    set_methods: tuple = SET_METHODS
    eval_seeds: tuple = (1, 2, 3)
    # calibration points drawn per eval seed; None -> size of the split's cal part
    n_cal: Optional[int] = 500
    hidden: tuple = (32, 32)
    activation: str = "relu"
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("at least one method is required")
        if not self.alphas:
            raise ConfigError("at least one alpha is required")
        if not self.set_methods:
            raise ConfigError("at least one set method is required")
        if not self.eval_seeds:
            raise ConfigError("at least one eval seed is required")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate method names in {names}")
        bad = set(self.set_methods) - set(SET_METHODS)
        if bad:
            raise ConfigError(f"unknown set methods {sorted(bad)}")
        if any(not 0 < a < 1 for a in self.alphas):
            raise ConfigError("alphas must lie in (0, 1)")
        bad = set(self.shift.kinds) - set(SHIFT_KINDS)
        if bad:
            raise ConfigError(f"unknown shift kinds {sorted(bad)}")
        if any(not 1 <= i <= 5 for i in self.shift.intensities):
            raise ConfigError("shift intensities must lie in 1..5")


def _csv(text: str, cast) -> tuple:
    return tuple(cast(t.strip()) for t in text.split(",") if t.strip())


def _opt_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


_DATA_KEYS = {
    "n_classes": int,
    "dim": int,
    "n": int,
    "class_sep": float,
    "within_std": float,
    "seed": int,
}
_TRAIN_KEYS = {
    "epochs": int,
    "batch_size": int,
    "step_size": float,
    "momentum_decay": float,
    "seed": int,
    "schedule": str,
    "cycle_epochs": int,
    "checkpoint_every": int,
}
_SGHMC_KEYS = {
    "burnin_epochs": int,
    "thin_epochs": int,
    "friction": _opt_float,
    "preconditioner": str,
    "rms_decay": float,
    "rms_eps": float,
}
_METHOD_KEYS = {
    "temperature": float,
    "ensemble_size": int,
    "init_sigma": float,
    "n_train_samples": int,
    "predictive_samples": int,
}


def _method_from_section(name: str, sec) -> MethodConfig:
    engine = sec.get("engine", name)
    known = {"engine", "prior_precision"} | set(_TRAIN_KEYS) | set(_METHOD_KEYS)
    if engine == "sghmc":
        known |= set(_SGHMC_KEYS)
    unknown = set(sec.keys()) - known
    if unknown:
        raise ConfigError(f"[method.{name}] unknown keys: {sorted(unknown)}")
    train_kw = {k: cast(sec[k]) for k, cast in _TRAIN_KEYS.items() if k in sec}
    if "prior_precision" in sec:
        train_kw["prior"] = PriorSpec(float(sec["prior_precision"]))
    if engine == "sghmc":
        train_kw.update({k: cast(sec[k]) for k, cast in _SGHMC_KEYS.items() if k in sec})
        train = SghmcConfig(**train_kw)
    else:
        train = TrainConfig(**train_kw)
    extra = {k: cast(sec[k]) for k, cast in _METHOD_KEYS.items() if k in sec}
    return MethodConfig(name=name, engine=engine, train=train, **extra)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigError(str(err)) from None
    try:
        data_kw = {}
        if cp.has_section("data"):
            unknown = set(cp["data"]) - set(_DATA_KEYS)
            if unknown:
                raise ConfigError(f"[data] unknown keys: {sorted(unknown)}")
            data_kw = {k: _DATA_KEYS[k](v) for k, v in cp["data"].items()}
        data = DataConfig(**data_kw)
        split_kw = {k: float(cp["split"][k]) for k in ("train", "val", "cal", "test") if cp.has_option("split", k)}
        if cp.has_option("split", "seed"):
            split_kw["seed"] = int(cp["split"]["seed"])
        split = SplitSpec(**{**dict(train=0.4, val=0.1, cal=0.25, test=0.25, seed=0), **split_kw})

        shift = ShiftConfig()
        if cp.has_section("shift"):
            s = cp["shift"]
            shift = ShiftConfig(
                kinds=_csv(s.get("kinds", ",".join(shift.kinds)), str),
                intensities=_csv(s.get("intensities", "1,2,3,4,5"), int),
                params=ShiftParams(
                    translate_step=_opt_float(s.get("translate_step", "auto")),
                    rotate_degrees=float(s.get("rotate_degrees", 10.0)),
                    noise_std=_opt_float(s.get("noise_std", "auto")),
                    scale_step=float(s.get("scale_step", 0.15)),
                ),
            )

        e = cp["experiment"] if cp.has_section("experiment") else {}
        exp_kw = {}
        if "alphas" in e:
            exp_kw["alphas"] = _csv(e["alphas"], float)
        if "set_methods" in e:
            exp_kw["set_methods"] = _csv(e["set_methods"], str)
        if "eval_seeds" in e:
            exp_kw["eval_seeds"] = _csv(e["eval_seeds"], int)
        if "n_cal" in e:
            exp_kw["n_cal"] = None if e["n_cal"].strip().lower() in ("none", "auto") else int(e["n_cal"])
        if "hidden" in e:
            exp_kw["hidden"] = _csv(e["hidden"], int)
        if "activation" in e:
            exp_kw["activation"] = e["activation"].strip()
        if "output_dir" in e:
            exp_kw["output_dir"] = e["output_dir"].strip()

        methods = [
            _method_from_section(sec[len("method."):], cp[sec])
            for sec in cp.sections()
            if sec.startswith("method.")
        ]
        return ExperimentConfig(methods=methods, data=data, split=split, shift=shift, **exp_kw)
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(str(err)) from None


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if v is None:
        return "auto"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def resolved_config_text(cfg: ExperimentConfig) -> str:
    """Every setting, defaults included, in the config file format."""
    cp = configparser.ConfigParser(interpolation=None)
    cp["data"] = {f.name: _fmt(getattr(cfg.data, f.name)) for f in dataclasses.fields(cfg.data)}
    cp["split"] = {k: _fmt(getattr(cfg.split, k)) for k in ("train", "val", "cal", "test", "seed")}
    cp["shift"] = {
        "kinds": _fmt(cfg.shift.kinds),
        "intensities": _fmt(cfg.shift.intensities),
        **{f.name: _fmt(getattr(cfg.shift.params, f.name)) for f in dataclasses.fields(ShiftParams)},
    }
    cp["experiment"] = {
        k: _fmt(getattr(cfg, k))
        for k in ("alphas", "set_methods", "eval_seeds", "n_cal", "hidden", "activation", "output_dir")
    }
    for m in cfg.methods:
        sec = {"engine": m.engine}
        for k in _TRAIN_KEYS:
            sec[k] = _fmt(getattr(m.train, k))
        sec["prior_precision"] = _fmt(float(m.train.prior.precision))
        if isinstance(m.train, SghmcConfig):
            for k in _SGHMC_KEYS:
                sec[k] = _fmt(getattr(m.train, k))
        for k in _METHOD_KEYS:
            sec[k] = _fmt(getattr(m, k))
        cp[f"method.{m.name}"] = sec
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    # output_dir does not influence results
    text = resolved_config_text(dataclasses.replace(cfg, output_dir=""))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def with_overrides(
    cfg: ExperimentConfig,
    seed: Optional[int] = None,
    alphas: Optional[tuple] = None,
    output_dir: Optional[str] = None,
) -> ExperimentConfig:
    """Apply CLI overrides: ``seed`` replaces every method's training seed."""
    if seed is not None:
        methods = [dataclasses.replace(m, train=dataclasses.replace(m.train, seed=seed)) for m in cfg.methods]
        cfg = dataclasses.replace(cfg, methods=methods)
    if alphas:
        cfg = dataclasses.replace(cfg, alphas=tuple(alphas))
    if output_dir is not None:
        cfg = dataclasses.replace(cfg, output_dir=str(output_dir))
    return cfg

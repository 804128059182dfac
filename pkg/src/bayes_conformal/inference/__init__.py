from bayes_conformal.inference.checkpoint import (
    dumps_posterior,
    load_posterior,
    loads_posterior,
    save_posterior,
)
from bayes_conformal.inference.config import SghmcConfig, TrainConfig, TrainingError
from bayes_conformal.inference.laplace import fit_laplace_last_layer
from bayes_conformal.inference.posteriors import (
    Ensemble,
    LaplaceLastLayer,
    MeanField,
    Point,
    PosteriorApproximation,
    SampleChain,
    posterior_predictive,
)
from bayes_conformal.inference.sghmc import run_sghmc
from bayes_conformal.inference.sgd import train_ensemble, train_map
from bayes_conformal.inference.vi import kl_gaussian_diag, train_mfvi

__all__ = [
    "Ensemble",
    "LaplaceLastLayer",
    "MeanField",
    "Point",
    "PosteriorApproximation",
    "SampleChain",
    "SghmcConfig",
    "TrainConfig",
    "TrainingError",
    "dumps_posterior",
    "fit_laplace_last_layer",
    "kl_gaussian_diag",
    "load_posterior",
    "loads_posterior",
    "posterior_predictive",
    "run_sghmc",
    "save_posterior",
    "train_ensemble",
    "train_map",
    "train_mfvi",
]

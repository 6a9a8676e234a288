"""Generative regression for scalar targets via conditional score diffusion.

Learns the full conditional posterior p(y | context) with a noise-prediction
network, samples it with DDPM/DDIM reverse passes, and summarizes the Monte
Carlo ensembles with distribution-aware metrics (CRPS, W1). Ships synthetic
tasks with exact mixture posteriors so every sampler and metric has a
closed-form oracle.
"""

from .core import ConditioningContext, TargetNormalizer, fit_normalizer
from .errors import GenRegError
from .estimators import DiffusionRegressor, PointRegressor
from .gmm import GaussianMixture1D
from .metrics import (
    MetricsReport,
    PosteriorEnsemble,
    crps_empirical,
    crps_gaussian,
    point_metrics,
    reliability_report,
    summarize,
)
from .nets import (
    CrossAttentionConfig,
    MLPConfig,
    cross_attention,
    eps_to_score,
    time_embed,
)
from .rng import RandomStream, gaussian_draw
from .sampling import (
    SamplerConfig,
    Trajectory,
    ddim_step,
    ddpm_step,
    mixture_denoiser,
    network_denoiser,
    sample_ensemble,
    sample_one,
)
from .schedule import NoiseSchedule, linear_schedule
from .synthetic import (
    GMMTaskSpec,
    SynthDataset,
    generate,
    make_task,
    mode_coverage,
    oracle_posterior,
    wasserstein1,
)
from .training import TrainConfig, train_diffusion, train_point_regressor

__version__ = "0.1.0"

__all__ = [
    "ConditioningContext", "TargetNormalizer", "fit_normalizer",
    "GenRegError", "DiffusionRegressor", "PointRegressor",
    "GaussianMixture1D", "MetricsReport", "PosteriorEnsemble",
    "crps_empirical", "crps_gaussian", "point_metrics", "reliability_report",
    "summarize", "CrossAttentionConfig", "MLPConfig", "cross_attention",
    "eps_to_score", "time_embed", "RandomStream", "gaussian_draw",
    "SamplerConfig", "Trajectory", "ddim_step", "ddpm_step",
    "mixture_denoiser", "network_denoiser", "sample_ensemble", "sample_one",
    "NoiseSchedule", "linear_schedule", "GMMTaskSpec", "SynthDataset",
    "generate", "make_task", "mode_coverage", "oracle_posterior",
    "wasserstein1", "TrainConfig", "train_diffusion", "train_point_regressor",
    "__version__",
]

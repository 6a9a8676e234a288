"""Scikit-learn style estimators wrapping the functional core.

X is a 2-D array whose last ``n_attributes`` columns are tabular attributes
and the rest are feature-vector columns, so the estimators slot into
ordinary sklearn pipelines while the diffusion machinery keeps its two-part
context. ``DiffusionRegressor.predict`` returns the posterior ensemble mean;
``sample`` exposes the full ensembles and ``predict_std`` their dispersion.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from ._validation import as_matrix, as_vector, require_same_length
from .nets import CrossAttentionConfig, MLPConfig, forward
from .rng import RandomStream
from .sampling import SamplerConfig, sample_ensemble_rows
from .schedule import linear_schedule
from .training import TrainConfig, train_diffusion, train_point_regressor


def _split_context(X: np.ndarray, n_attributes: int):
    if n_attributes < 0 or n_attributes >= X.shape[1]:
        raise ValueError(
            f"n_attributes={n_attributes} must leave at least one feature "
            f"column in X with {X.shape[1]} columns"
        )
    if n_attributes == 0:
        return X, np.zeros((X.shape[0], 0))
    return X[:, :-n_attributes], X[:, -n_attributes:]


def _build_net_config(architecture, d_v, d_a, conditional, *, d_model, n_heads,
                      hidden, attr_hidden, feature_hidden, head_hidden,
                      time_dim, fuse_context):
    if architecture == "mlp":
        return MLPConfig(
            feature_dim=d_v, attribute_dim=d_a, hidden=tuple(hidden),
            time_dim=time_dim, conditional=conditional,
        )
    if architecture == "cross_attention":
        return CrossAttentionConfig(
            feature_dim=d_v, attribute_dim=d_a, d_model=d_model,
            n_heads=n_heads, attr_hidden=tuple(attr_hidden),
            feature_hidden=tuple(feature_hidden),
            head_hidden=tuple(head_hidden), time_dim=time_dim,
            fuse_context=fuse_context, conditional=conditional,
        )
    raise ValueError(f"unknown architecture {architecture!r}")


class DiffusionRegressor(BaseEstimator, RegressorMixin):
    """Conditional score-diffusion regressor with posterior sampling.

    Parameters mirror the functional layer: architecture/width knobs,
    noise-schedule bounds, AdamW settings, and the reverse-sampler
    configuration used at prediction time (kind, eta, n_steps=tau,
    n_samples=K ensemble size).
    """

    def __init__(self, architecture="cross_attention", n_attributes=0,
                 d_model=32, n_heads=4, hidden=(64, 64), attr_hidden=(32,),
                 feature_hidden=(), head_hidden=(64,), time_dim=16,
                 fuse_context=False, timesteps=1000, beta_min=1e-4,
                 beta_max=0.02, epochs=150, batch_size=128,
                 learning_rate=3e-4, weight_decay=1e-5, grad_clip=10.0,
                 val_fraction=0.1, early_stop_patience=None,
                 sampler="ddim", eta=0.0, n_steps=10,
                 step_selection="quadratic", n_samples=40, clip_bounds=None,
                 random_state=0):
        self.architecture = architecture
        self.n_attributes = n_attributes
        self.d_model = d_model
        self.n_heads = n_heads
        self.hidden = hidden
        self.attr_hidden = attr_hidden
        self.feature_hidden = feature_hidden
        self.head_hidden = head_hidden
        self.time_dim = time_dim
        self.fuse_context = fuse_context
        self.timesteps = timesteps
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.val_fraction = val_fraction
        self.early_stop_patience = early_stop_patience
        self.sampler = sampler
        self.eta = eta
        self.n_steps = n_steps
        self.step_selection = step_selection
        self.n_samples = n_samples
        self.clip_bounds = clip_bounds
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, weight_decay=self.weight_decay,
            seed=self.random_state, grad_clip=self.grad_clip,
            val_fraction=self.val_fraction,
            early_stop_patience=self.early_stop_patience,
        )

    def fit(self, X, y):
        X = as_matrix(X, "X")
        y = as_vector(y, "y")
        require_same_length(X, y, "X", "y")
        feats, attrs = _split_context(X, self.n_attributes)
        self.net_config_ = _build_net_config(
            self.architecture, feats.shape[1], attrs.shape[1], True,
            d_model=self.d_model, n_heads=self.n_heads, hidden=self.hidden,
            attr_hidden=self.attr_hidden, feature_hidden=self.feature_hidden,
            head_hidden=self.head_hidden, time_dim=self.time_dim,
            fuse_context=self.fuse_context,
        )
        self.schedule_ = linear_schedule(self.timesteps, self.beta_min, self.beta_max)
        result = train_diffusion(
            feats, attrs, y, self.net_config_, self._train_config(), self.schedule_,
        )
        self.params_ = result.params
        self.normalizer_ = result.normalizer
        self.history_ = result.history
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before predicting")

    def _sampler_config(self) -> SamplerConfig:
        return SamplerConfig(
            kind=self.sampler, eta=self.eta, tau=self.n_steps,
            step_selection=self.step_selection,
        )

    def sample(self, X, n_samples=None):
        """Posterior draws per row, denormalized: shape (n, K)."""
        self._check_fitted()
        X = as_matrix(X, "X")
        feats, attrs = _split_context(X, self.n_attributes)
        k = n_samples if n_samples is not None else self.n_samples
        draws, _ = sample_ensemble_rows(
            self.net_config_, self.params_, feats, attrs, k,
            self._sampler_config(), self.schedule_,
            RandomStream(seed=self.random_state).derive(9000),
        )
        return self.normalizer_.denormalize(draws)

    def predict(self, X):
        """Posterior ensemble mean per row (clipped when clip_bounds set)."""
        means = self.sample(X).mean(axis=1)
        if self.clip_bounds is not None:
            lo, hi = self.clip_bounds
            means = np.clip(means, lo, hi)
        return means

    def predict_std(self, X):
        """Unbiased ensemble standard deviation per row."""
        return self.sample(X).std(axis=1, ddof=1)


class PointRegressor(BaseEstimator, RegressorMixin):
    """Deterministic baseline: identical encoders, direct MSE on the target."""

    def __init__(self, architecture="cross_attention", n_attributes=0,
                 d_model=32, n_heads=4, hidden=(64, 64), attr_hidden=(32,),
                 feature_hidden=(), head_hidden=(64,), fuse_context=False,
                 epochs=150, batch_size=128, learning_rate=3e-4,
                 weight_decay=1e-5, grad_clip=10.0, val_fraction=0.1,
                 early_stop_patience=None, random_state=0):
        self.architecture = architecture
        self.n_attributes = n_attributes
        self.d_model = d_model
        self.n_heads = n_heads
        self.hidden = hidden
        self.attr_hidden = attr_hidden
        self.feature_hidden = feature_hidden
        self.head_hidden = head_hidden
        self.fuse_context = fuse_context
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.val_fraction = val_fraction
        self.early_stop_patience = early_stop_patience
        self.random_state = random_state

    def fit(self, X, y):
        X = as_matrix(X, "X")
        y = as_vector(y, "y")
        require_same_length(X, y, "X", "y")
        feats, attrs = _split_context(X, self.n_attributes)
        self.net_config_ = _build_net_config(
            self.architecture, feats.shape[1], attrs.shape[1], False,
            d_model=self.d_model, n_heads=self.n_heads, hidden=self.hidden,
            attr_hidden=self.attr_hidden, feature_hidden=self.feature_hidden,
            head_hidden=self.head_hidden, time_dim=16,
            fuse_context=self.fuse_context,
        )
        cfg = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, weight_decay=self.weight_decay,
            seed=self.random_state, grad_clip=self.grad_clip,
            val_fraction=self.val_fraction,
            early_stop_patience=self.early_stop_patience,
        )
        result = train_point_regressor(feats, attrs, y, self.net_config_, cfg)
        self.params_ = result.params
        self.normalizer_ = result.normalizer
        self.history_ = result.history
        return self

    def predict(self, X):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before predicting")
        X = as_matrix(X, "X")
        feats, attrs = _split_context(X, self.n_attributes)
        y_hat = forward(self.net_config_, self.params_, None, None, feats, attrs)
        return self.normalizer_.denormalize(y_hat)

"""Denoising score-matching training with AdamW, plus the MSE baseline.

The diffusion objective draws, per example, a uniform step t in {1..T} and a
fresh Gaussian eps, forms y_t through the forward marginal, and regresses the
network output onto eps with mean squared error. The baseline trains the same
encoders with a direct scalar head on the normalized target, which is the
deterministic point of comparison for the paradigm ablation.

Everything is driven by derived RandomStreams keyed on the config seed, and
gradient reduction order is fixed, so (data, config, seed) pin every
checkpoint byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TargetNormalizer, fit_normalizer
from .errors import (
    DivergedTraining,
    EmptyDataset,
    InvalidRange,
    NonFiniteActivation,
    NonFiniteGradient,
    NonFiniteUpdate,
)
from .metrics import crps_empirical
from .nets import backward, forward, forward_cached, global_norm, init_params
from .rng import RandomStream
from .sampling import SamplerConfig, sample_ensemble_rows
from .schedule import NoiseSchedule

# stream derivation tags
_S_SPLIT, _S_INIT, _S_SHUFFLE, _S_BATCH, _S_VAL = 11, 12, 13, 14, 15


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 3e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    grad_clip: float | None = 10.0
    ema_decay: float | None = None
    val_fraction: float = 0.1
    val_every: int = 10            # epochs between validation passes
    val_samples: int = 16          # ensemble size for validation CRPS
    val_tau: int = 10
    early_stop_patience: int | None = None  # val passes without improvement
    restore_best: bool = True      # return the best-validation parameters
    checkpoint_every: int | None = None     # epochs between callback invocations

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidRange("learning_rate must be > 0")
        if self.batch_size < 1:
            raise InvalidRange("batch_size must be >= 1")
        if self.epochs < 1:
            raise InvalidRange("epochs must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise InvalidRange("val_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay, "beta1": self.beta1,
            "beta2": self.beta2, "adam_eps": self.adam_eps, "seed": self.seed,
            "grad_clip": self.grad_clip, "ema_decay": self.ema_decay,
            "val_fraction": self.val_fraction, "val_every": self.val_every,
            "val_samples": self.val_samples, "val_tau": self.val_tau,
            "early_stop_patience": self.early_stop_patience,
            "restore_best": self.restore_best,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            step=0,
        )


def adamw_step(params: dict, grads: dict, state: AdamState,
               cfg: TrainConfig) -> tuple:
    """One decoupled-weight-decay Adam update.

    Decay multiplies parameters directly (p -= lr*wd*p); it never flows
    through the gradient moments.
    """
    if set(params) != set(grads):
        raise InvalidRange("params and grads must share keys")
    step = state.step + 1
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        p_new = p - cfg.learning_rate * update - cfg.learning_rate * cfg.weight_decay * p
        if not np.all(np.isfinite(p_new)):
            raise NonFiniteUpdate(f"parameter {k} became non-finite")
        new_params[k], new_m[k], new_v[k] = p_new, m, v
    return new_params, AdamState(m=new_m, v=new_v, step=step)


def clip_gradients(grads: dict, max_norm: float) -> dict:
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def _draw_dsm_inputs(y0: np.ndarray, sched: NoiseSchedule, stream: RandomStream):
    gen = stream.generator()
    B = y0.shape[0]
    t = gen.integers(1, sched.T + 1, size=B)
    eps = gen.standard_normal(B)
    ab = sched.alpha_bar[t - 1]
    y_t = np.sqrt(ab) * y0 + np.sqrt(1.0 - ab) * eps
    return t, eps, y_t


def dsm_batch_loss(config, params, y0, features, attributes,
                   sched: NoiseSchedule, stream: RandomStream,
                   denoiser_fn=None):
    """Noise-prediction loss over one batch of normalized targets.

    Returns (loss, records) where records holds the drawn (t, eps, y_t) per
    example; loss = mean (eps - eps_hat)^2. denoiser_fn(y_t, t) overrides the
    network (used to score reference denoisers such as the exact inverse of
    the perturbation).
    """
    y0 = np.asarray(y0, dtype=np.float64).reshape(-1)
    if y0.size == 0:
        raise EmptyDataset("batch is empty")
    t, eps, y_t = _draw_dsm_inputs(y0, sched, stream)
    if denoiser_fn is not None:
        eps_hat = np.asarray(denoiser_fn(y_t, t), dtype=np.float64)
    else:
        eps_hat = forward(config, params, y_t, t, features, attributes)
    loss = float(np.mean((eps - eps_hat) ** 2))
    return loss, {"t": t, "eps": eps, "y_t": y_t}


def dsm_batch_grad(config, params, y0, features, attributes,
                   sched: NoiseSchedule, stream: RandomStream):
    y0 = np.asarray(y0, dtype=np.float64).reshape(-1)
    if y0.size == 0:
        raise EmptyDataset("batch is empty")
    t, eps, y_t = _draw_dsm_inputs(y0, sched, stream)
    eps_hat, cache = forward_cached(config, params, y_t, t, features, attributes)
    resid = eps_hat - eps
    loss = float(np.mean(resid ** 2))
    grads = backward(config, params, cache, 2.0 * resid / resid.size)
    return loss, grads, {"t": t, "eps": eps, "y_t": y_t}


def mse_batch_loss(config, params, y0, features, attributes):
    y0 = np.asarray(y0, dtype=np.float64).reshape(-1)
    if y0.size == 0:
        raise EmptyDataset("batch is empty")
    y_hat = forward(config, params, None, None, features, attributes)
    return float(np.mean((y_hat - y0) ** 2))


def mse_batch_grad(config, params, y0, features, attributes):
    y0 = np.asarray(y0, dtype=np.float64).reshape(-1)
    if y0.size == 0:
        raise EmptyDataset("batch is empty")
    y_hat, cache = forward_cached(config, params, None, None, features, attributes)
    resid = y_hat - y0
    loss = float(np.mean(resid ** 2))
    grads = backward(config, params, cache, 2.0 * resid / resid.size)
    return loss, grads


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainResult:
    params: dict
    normalizer: TargetNormalizer
    history: list          # rows (step, loss, val_metric or None)
    final_loss: float
    best_val: float | None
    steps: int
    stopped_early: bool


def smoothed_losses(history, window: int = 50) -> np.ndarray:
    """Moving average of the recorded per-step losses."""
    losses = np.array([row[1] for row in history], dtype=np.float64)
    if losses.size <= window:
        return losses
    kernel = np.ones(window) / window
    return np.convolve(losses, kernel, mode="valid")


def _split_train_val(n: int, cfg: TrainConfig, stream: RandomStream):
    perm = stream.derive(_S_SPLIT).generator().permutation(n)
    n_val = int(round(n * cfg.val_fraction))
    if n_val < 2:
        return perm, np.array([], dtype=np.int64)
    return perm[n_val:], perm[:n_val]


def _train_loop(n_train, cfg, init, grad_fn, val_fn, callback):
    """Shared optimizer loop; grad_fn owns the objective, val_fn the metric."""
    stream = RandomStream(seed=cfg.seed)
    params = init
    state = AdamState.zeros_like(params)
    ema = {k: p.copy() for k, p in params.items()} if cfg.ema_decay else None
    history = []
    best_val, best_params, bad_evals = None, None, 0
    stopped = False
    step = 0
    for epoch in range(cfg.epochs):
        perm = stream.derive(_S_SHUFFLE, epoch).generator().permutation(n_train)
        for lo in range(0, n_train, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            try:
                loss, grads = grad_fn(params, idx, stream.derive(_S_BATCH, step))
                if not np.isfinite(loss):
                    raise DivergedTraining(f"loss became {loss} at step {step}")
                if cfg.grad_clip is not None:
                    grads = clip_gradients(grads, cfg.grad_clip)
                params, state = adamw_step(params, grads, state, cfg)
            except (NonFiniteActivation, NonFiniteGradient, NonFiniteUpdate) as exc:
                raise DivergedTraining(
                    f"training exploded at step {step}: {exc}"
                ) from exc
            if ema is not None:
                d = cfg.ema_decay
                for k in ema:
                    ema[k] = d * ema[k] + (1.0 - d) * params[k]
            history.append([step, loss, None])
            step += 1
        eval_params = ema if ema is not None else params
        if val_fn is not None and (epoch + 1) % cfg.val_every == 0:
            val = val_fn(eval_params, epoch)
            if history:
                history[-1][2] = val
            if best_val is None or val < best_val:
                best_val, best_params, bad_evals = val, {
                    k: p.copy() for k, p in eval_params.items()
                }, 0
            else:
                bad_evals += 1
                if (cfg.early_stop_patience is not None
                        and bad_evals >= cfg.early_stop_patience):
                    stopped = True
        if callback is not None and cfg.checkpoint_every is not None \
                and (epoch + 1) % cfg.checkpoint_every == 0:
            callback(epoch, eval_params)
        if stopped:
            break
    final_params = ema if ema is not None else params
    if best_params is not None and (stopped or cfg.restore_best):
        final_params = best_params
    return final_params, history, best_val, step, stopped


def train_diffusion(features, attributes, y_raw, net_config,
                    cfg: TrainConfig, sched: NoiseSchedule,
                    normalizer: TargetNormalizer | None = None,
                    callback=None) -> TrainResult:
    """Fit the noise predictor by denoising score matching.

    Targets are normalized internally (or by the provided normalizer);
    validation quality is the mean empirical CRPS of small DDIM ensembles on
    the held-out split, in normalized units.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    attributes = np.asarray(attributes, dtype=np.float64).reshape(n, -1)
    y_raw = np.asarray(y_raw, dtype=np.float64).reshape(-1)
    if n < cfg.batch_size:
        raise EmptyDataset(f"dataset ({n}) smaller than batch_size")
    if normalizer is None:
        normalizer = fit_normalizer(y_raw)
    y0 = normalizer.normalize(y_raw)

    stream = RandomStream(seed=cfg.seed)
    train_ix, val_ix = _split_train_val(n, cfg, stream)
    params = init_params(net_config, stream.derive(_S_INIT))

    # grad_fn receives indices into the training subset
    def grad_fn_sub(p, idx, batch_stream):
        rows = train_ix[idx]
        loss, grads, _ = dsm_batch_grad(
            net_config, p, y0[rows], features[rows], attributes[rows],
            sched, batch_stream,
        )
        return loss, grads

    val_fn = None
    if val_ix.size >= 2:
        sampler = SamplerConfig(kind="ddim", eta=0.0, tau=cfg.val_tau)

        def val_fn(p, epoch):
            draws, _ = sample_ensemble_rows(
                net_config, p, features[val_ix], attributes[val_ix],
                cfg.val_samples, sampler, sched, stream.derive(_S_VAL, epoch),
            )
            return float(np.mean([
                crps_empirical(draws[i], y0[val_ix[i]])
                for i in range(val_ix.size)
            ]))

    final_params, history, best_val, steps, stopped = _train_loop(
        train_ix.size, cfg, params, grad_fn_sub, val_fn, callback,
    )
    return TrainResult(
        params=final_params, normalizer=normalizer, history=history,
        final_loss=history[-1][1], best_val=best_val, steps=steps,
        stopped_early=stopped,
    )


def train_point_regressor(features, attributes, y_raw, net_config,
                          cfg: TrainConfig,
                          normalizer: TargetNormalizer | None = None,
                          callback=None) -> TrainResult:
    """Fit the deterministic baseline (direct MSE on the normalized target)."""
    if net_config.conditional:
        raise InvalidRange("point regressor needs a conditional=False config")
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    attributes = np.asarray(attributes, dtype=np.float64).reshape(n, -1)
    y_raw = np.asarray(y_raw, dtype=np.float64).reshape(-1)
    if n < cfg.batch_size:
        raise EmptyDataset(f"dataset ({n}) smaller than batch_size")
    if normalizer is None:
        normalizer = fit_normalizer(y_raw)
    y0 = normalizer.normalize(y_raw)

    stream = RandomStream(seed=cfg.seed)
    train_ix, val_ix = _split_train_val(n, cfg, stream)
    params = init_params(net_config, stream.derive(_S_INIT))

    def grad_fn(p, idx, _batch_stream):
        rows = train_ix[idx]
        return mse_batch_grad(net_config, p, y0[rows], features[rows],
                              attributes[rows])

    val_fn = None
    if val_ix.size >= 2:
        def val_fn(p, epoch):
            y_hat = forward(net_config, p, None, None, features[val_ix],
                            attributes[val_ix])
            return float(np.mean(np.abs(y_hat - y0[val_ix])))

    final_params, history, best_val, steps, stopped = _train_loop(
        train_ix.size, cfg, params, grad_fn, val_fn, callback,
    )
    return TrainResult(
        params=final_params, normalizer=normalizer, history=history,
        final_loss=history[-1][1], best_val=best_val, steps=steps,
        stopped_early=stopped,
    )

"""Experiment orchestration shared by the CLI and the acceptance suite.

Holds the default experiment configuration, checkpoint evaluation, the four
ablation studies (paradigm, sampler, steps, ensemble), and the
sampler-soundness report driven by the analytic mixture oracle. Everything
is pure in (config, seed): reruns produce identical numbers; wall-clock
timings are returned separately so primary outputs stay deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import TargetNormalizer
from .errors import ConfigParse, InvalidRange
from .metrics import crps_empirical, point_metrics, summarize
from .nets import CrossAttentionConfig, MLPConfig, forward
from .rng import RandomStream
from .sampling import (
    SamplerConfig,
    denoiser_calls_per_sample,
    mixture_denoiser,
    sample_ensemble,
    sample_ensemble_rows,
)
from .schedule import NoiseSchedule, linear_schedule
from .synthetic import (
    generate,
    make_task,
    mode_coverage,
    oracle_posterior,
    wasserstein1,
)
from .training import TrainConfig, train_diffusion, train_point_regressor

# stream tags for evaluation-time sampling
_S_EVAL, _S_TRUTH, _S_ORACLE = 21, 22, 23

DEFAULT_CONFIG = {
    "schema_version": 1,
    "task": "B",
    "dataset": None,
    "n_train": 16384,
    "physical_units": False,
    "architecture": "cross_attention",
    "objective": "diffusion",
    "network": {
        "d_model": 32,
        "n_heads": 4,
        "hidden": [64, 64],
        "attr_hidden": [32],
        "feature_hidden": [],
        "head_hidden": [64],
        "time_dim": 16,
        "fuse_context": False,
    },
    "schedule": {"T": 1000, "beta_min": 1e-4, "beta_max": 0.02},
    "train": {
        "epochs": 240,
        "batch_size": 256,
        "learning_rate": 3e-4,
        "weight_decay": 1e-5,
        "ema_decay": 0.999,
        "grad_clip": 10.0,
        "val_fraction": 0.05,
        "val_every": 20,
        "val_samples": 24,
        "early_stop_patience": None,
    },
    "sampler": {"kind": "ddim", "eta": 0.0, "tau": 10,
                "step_selection": "quadratic"},
    "n_posterior_samples": 40,
    "clip_bounds": None,
    "seed": 0,
}


def merge_config(user: dict | None) -> dict:
    """Overlay a user config onto the defaults (one level of nesting)."""
    cfg = {k: (dict(v) if isinstance(v, dict) else v)
           for k, v in DEFAULT_CONFIG.items()}
    for key, val in (user or {}).items():
        if key not in cfg:
            raise ConfigParse(f"unknown config key {key!r}")
        if isinstance(cfg[key], dict) and isinstance(val, dict):
            for sub, subval in val.items():
                if sub not in cfg[key]:
                    raise ConfigParse(f"unknown config key {key}.{sub}")
                cfg[key][sub] = subval
        else:
            cfg[key] = val
    if cfg["physical_units"] and cfg["clip_bounds"] is None:
        cfg["clip_bounds"] = [0.0, 100.0]
    return cfg


def build_net_config(cfg: dict, d_v: int, d_a: int, conditional: bool):
    net = cfg["network"]
    if cfg["architecture"] == "mlp":
        return MLPConfig(
            feature_dim=d_v, attribute_dim=d_a, hidden=tuple(net["hidden"]),
            time_dim=net["time_dim"], conditional=conditional,
        )
    if cfg["architecture"] == "cross_attention":
        return CrossAttentionConfig(
            feature_dim=d_v, attribute_dim=d_a, d_model=net["d_model"],
            n_heads=net["n_heads"], attr_hidden=tuple(net["attr_hidden"]),
            feature_hidden=tuple(net["feature_hidden"]),
            head_hidden=tuple(net["head_hidden"]), time_dim=net["time_dim"],
            fuse_context=net["fuse_context"], conditional=conditional,
        )
    raise ConfigParse(f"unknown architecture {cfg['architecture']!r}")


def build_train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg["train"])
    t.setdefault("seed", cfg["seed"])
    return TrainConfig(**t)


def build_schedule(cfg: dict) -> NoiseSchedule:
    s = cfg["schedule"]
    return linear_schedule(int(s["T"]), float(s["beta_min"]), float(s["beta_max"]))


def build_sampler(cfg: dict) -> SamplerConfig:
    return SamplerConfig(**cfg["sampler"])


def resolve_dataset(cfg: dict, n: int | None = None, seed_offset: int = 0):
    """Training data from the configured synthetic task."""
    spec = make_task(cfg["task"])
    data = generate(spec, n or cfg["n_train"], seed=cfg["seed"] + seed_offset,
                    physical=cfg["physical_units"])
    return spec, data


# ---------------------------------------------------------------------------
# checkpoint evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalItem:
    index: int
    y_true: float
    mean: float
    std: float | None
    crps: float
    oob_rate: float
    flagged: bool


@dataclass(frozen=True)
class EvalResult:
    report: "object"            # MetricsReport
    items: list
    denoiser_calls_per_item: int
    wall_clock_s: float
    samples: np.ndarray         # (n, K) denormalized


def evaluate_model(net_config, params, normalizer: TargetNormalizer,
                   sched: NoiseSchedule, features, attributes, y_true,
                   k: int, sampler_cfg: SamplerConfig, stream: RandomStream,
                   bounds=None, dispersion_threshold: float | None = None,
                   chunk_size: int = 4096) -> EvalResult:
    """Posterior-sample a model over rows and score against ground truth."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    attributes = np.asarray(attributes, dtype=np.float64).reshape(n, -1)
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    t0 = time.monotonic()
    if net_config.conditional:
        draws_n, _ = sample_ensemble_rows(
            net_config, params, features, attributes, k, sampler_cfg, sched,
            stream, chunk_size=chunk_size,
        )
        calls = denoiser_calls_per_sample(sched.T, sampler_cfg) * k
    else:
        y_hat = forward(net_config, params, None, None, features, attributes)
        draws_n = y_hat[:, None]
        calls = 1
    wall = time.monotonic() - t0
    draws = normalizer.denormalize(draws_n)
    ensembles = [summarize(draws[i], bounds=bounds) for i in range(n)]
    crps_vals = np.array([crps_empirical(draws[i], y_true[i]) for i in range(n)])
    stds = np.array([e.std if e.std is not None else 0.0 for e in ensembles])
    if dispersion_threshold is None:
        dispersion_threshold = float(np.median(stds))
    means = np.array([e.clipped_mean for e in ensembles])
    report = point_metrics(means, y_true, crps=float(np.mean(crps_vals)))
    items = [
        EvalItem(
            index=i, y_true=float(y_true[i]), mean=float(means[i]),
            std=ensembles[i].std, crps=float(crps_vals[i]),
            oob_rate=ensembles[i].oob_rate,
            flagged=bool(stds[i] > dispersion_threshold),
        )
        for i in range(n)
    ]
    return EvalResult(report=report, items=items,
                      denoiser_calls_per_item=calls, wall_clock_s=wall,
                      samples=draws)


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    variant: str
    mae: float
    rmse: float
    r2: float
    crps: float
    denoiser_calls_per_item: int
    wall_clock_s: float


def _eval_row(variant, net_config, result, sched, ev, k, sampler_cfg, stream,
              bounds=None) -> AblationRow:
    res = evaluate_model(
        net_config, result.params, result.normalizer, sched, ev.features,
        ev.attributes, ev.y, k, sampler_cfg, stream, bounds=bounds,
    )
    r = res.report
    return AblationRow(
        variant=variant, mae=r.mae, rmse=r.rmse, r2=r.r2, crps=r.crps,
        denoiser_calls_per_item=res.denoiser_calls_per_item,
        wall_clock_s=res.wall_clock_s,
    )


def ablate_paradigm(cfg: dict, n_eval: int = 256) -> list:
    """Generative vs deterministic regression with identical encoders."""
    spec, data = resolve_dataset(cfg)
    sched = build_schedule(cfg)
    train_cfg = build_train_config(cfg)
    ev = generate(spec, n_eval, seed=cfg["seed"] + 7919,
                  physical=cfg["physical_units"])
    stream = RandomStream(cfg["seed"]).derive(_S_EVAL)
    k = cfg["n_posterior_samples"]
    sampler_cfg = build_sampler(cfg)
    d_a = data.attributes.shape[1]

    diff_net = build_net_config(cfg, data.features.shape[1], d_a, True)
    diff = train_diffusion(data.features, data.attributes, data.y, diff_net,
                           train_cfg, sched)
    point_net = build_net_config(cfg, data.features.shape[1], d_a, False)
    point = train_point_regressor(data.features, data.attributes, data.y,
                                  point_net, train_cfg)
    bounds = tuple(cfg["clip_bounds"]) if cfg["clip_bounds"] else None
    return [
        _eval_row("diffusion", diff_net, diff, sched, ev, k, sampler_cfg,
                  stream, bounds),
        _eval_row("point_mse", point_net, point, sched, ev, 1, sampler_cfg,
                  stream, bounds),
    ]


def _trained_diffusion(cfg: dict):
    spec, data = resolve_dataset(cfg)
    sched = build_schedule(cfg)
    net = build_net_config(cfg, data.features.shape[1],
                           data.attributes.shape[1], True)
    result = train_diffusion(data.features, data.attributes, data.y, net,
                             build_train_config(cfg), sched)
    return spec, sched, net, result


def ablate_sampler(cfg: dict, n_eval: int = 256, trained=None) -> list:
    """Deterministic DDIM (tau steps) against stochastic DDPM (all T steps)."""
    spec, sched, net, result = trained or _trained_diffusion(cfg)
    ev = generate(spec, n_eval, seed=cfg["seed"] + 7919,
                  physical=cfg["physical_units"])
    stream = RandomStream(cfg["seed"]).derive(_S_EVAL)
    k = cfg["n_posterior_samples"]
    bounds = tuple(cfg["clip_bounds"]) if cfg["clip_bounds"] else None
    base = build_sampler(cfg)
    rows = []
    for variant, scfg in [
        (f"ddim_tau{base.tau}", base),
        ("ddpm_full", SamplerConfig(kind="ddpm")),
    ]:
        rows.append(_eval_row(variant, net, result, sched, ev, k, scfg,
                              stream, bounds))
    return rows


def ablate_steps(cfg: dict, taus=(1, 2, 5, 10, 50, 200), n_eval: int = 256,
                 trained=None) -> list:
    """DDIM step-count sweep with common random numbers across variants."""
    spec, sched, net, result = trained or _trained_diffusion(cfg)
    ev = generate(spec, n_eval, seed=cfg["seed"] + 7919,
                  physical=cfg["physical_units"])
    stream = RandomStream(cfg["seed"]).derive(_S_EVAL)
    k = cfg["n_posterior_samples"]
    bounds = tuple(cfg["clip_bounds"]) if cfg["clip_bounds"] else None
    base = build_sampler(cfg)
    rows = []
    for tau in taus:
        scfg = SamplerConfig(kind="ddim", eta=base.eta, tau=int(tau),
                             step_selection=base.step_selection)
        rows.append(_eval_row(f"tau{tau}", net, result, sched, ev, k, scfg,
                              stream, bounds))
    return rows


def ablate_ensemble(cfg: dict, ks=(5, 10, 20, 40, 80), n_eval: int = 256,
                    trained=None) -> list:
    """Posterior sample-count sweep at the configured sampler."""
    spec, sched, net, result = trained or _trained_diffusion(cfg)
    ev = generate(spec, n_eval, seed=cfg["seed"] + 7919,
                  physical=cfg["physical_units"])
    stream = RandomStream(cfg["seed"]).derive(_S_EVAL)
    sampler_cfg = build_sampler(cfg)
    bounds = tuple(cfg["clip_bounds"]) if cfg["clip_bounds"] else None
    return [
        _eval_row(f"k{k}", net, result, sched, ev, int(k), sampler_cfg,
                  stream, bounds)
        for k in ks
    ]


def run_ablation(kind: str, cfg: dict, n_eval: int = 256) -> list:
    if kind == "paradigm":
        return ablate_paradigm(cfg, n_eval)
    if kind == "sampler":
        return ablate_sampler(cfg, n_eval)
    if kind == "steps":
        return ablate_steps(cfg, n_eval=n_eval)
    if kind == "ensemble":
        return ablate_ensemble(cfg, n_eval=n_eval)
    raise InvalidRange(f"unknown ablation kind {kind!r}")


# ---------------------------------------------------------------------------
# oracle soundness report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleContextReport:
    features: list
    attributes: list
    wasserstein1: float
    mode_fractions: list
    modes_covered: bool


@dataclass(frozen=True)
class OracleReport:
    task: str
    sampler: dict
    n_samples: int
    w1_threshold: float
    contexts: list
    max_w1: float
    all_modes_covered: bool
    passed: bool


def oracle_soundness(task: str, sampler_cfg: SamplerConfig,
                     n_samples: int = 10000, seed: int = 0,
                     n_contexts: int = 3, w1_threshold: float = 0.05,
                     sched: NoiseSchedule | None = None) -> OracleReport:
    """Drive the sampler with the exact mixture denoiser and compare to truth.

    Sampling happens in the task's marginal-normalized space (the model
    space); W1 distances are therefore in normalized units. A task passes
    when every probe context is within the threshold and, for multimodal
    tasks, every mode with weight >= 0.2 is covered.
    """
    spec = make_task(task)
    sched = sched or linear_schedule(1000, 1e-4, 0.02)
    ref = generate(spec, 20000, seed=seed + 404)
    center, scale = float(np.mean(ref.y)), float(np.std(ref.y))
    probes = generate(spec, n_contexts, seed=seed + 808)
    stream = RandomStream(seed).derive(_S_ORACLE)
    contexts = []
    for i in range(n_contexts):
        mix = oracle_posterior(spec, probes.features[i], probes.attributes[i])
        mix_n = mix.affine(center, scale)
        eps_fn = mixture_denoiser(mix_n, sched)
        samples, _ = sample_ensemble(eps_fn, n_samples, sampler_cfg, sched,
                                     stream.derive(i))
        truth = mix_n.sample(stream.derive(i, 1000003), n_samples)
        w1 = wasserstein1(samples, truth)
        radius = 2.0 * float(np.max(mix_n.stds))
        cov = mode_coverage(samples, mix_n, radius=radius)
        relevant = mix_n.weights >= 0.2
        covered = bool(np.all(cov.covered[relevant]))
        contexts.append(OracleContextReport(
            features=[float(v) for v in probes.features[i]],
            attributes=[float(v) for v in probes.attributes[i]],
            wasserstein1=float(w1),
            mode_fractions=[float(v) for v in cov.fractions],
            modes_covered=covered,
        ))
    max_w1 = max(c.wasserstein1 for c in contexts)
    all_cov = all(c.modes_covered for c in contexts)
    return OracleReport(
        task=spec.name, sampler=sampler_cfg.to_dict(), n_samples=n_samples,
        w1_threshold=w1_threshold, contexts=contexts, max_w1=max_w1,
        all_modes_covered=all_cov,
        passed=bool(max_w1 < w1_threshold and all_cov),
    )


__all__ = [
    "DEFAULT_CONFIG", "merge_config", "build_net_config",
    "build_train_config", "build_schedule", "build_sampler",
    "resolve_dataset", "evaluate_model", "EvalResult", "EvalItem",
    "AblationRow", "ablate_paradigm", "ablate_sampler", "ablate_steps",
    "ablate_ensemble", "run_ablation", "oracle_soundness", "OracleReport",
]

"""Command-line interface.

Subcommands: train, sample, eval, ablate, oracle, schedule-dump. Every
command is pure in (inputs, config, seed): primary outputs (checkpoints,
CSVs, JSON reports) are byte-identical across reruns. Wall-clock timings and
timestamps go to run.log / timing.csv, which are documented as excluded from
that guarantee. Failures print a machine-readable error JSON and exit 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
import warnings

import numpy as np

from . import experiments
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ConfigParse,
    DatasetNotFound,
    DimensionMismatch,
    GenRegError,
    LengthMismatch,
)
from .metrics import summarize
from .nets import forward
from .rng import RandomStream
from .sampling import SamplerConfig, sample_ensemble_rows, write_trajectories_csv
from .schedule import linear_schedule, write_schedule_csv
from .synthetic import read_jsonl
from .training import train_diffusion, train_point_regressor

SCHEMA_VERSION = 1


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_config(path, seed_override=None) -> dict:
    user = {}
    if path is not None:
        if not os.path.exists(path):
            raise DatasetNotFound(f"config file not found: {path}")
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigParse(f"config is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigParse("config root must be a JSON object")
    user.pop("schema_version", None)
    cfg = experiments.merge_config(user)
    if seed_override is not None:
        cfg["seed"] = seed_override
    return cfg


def _load_rows(path, csv_features=None, csv_attributes=None, csv_target=None):
    """Dataset rows from JSONL (default) or CSV with a header mapping."""
    if not os.path.exists(path):
        raise DatasetNotFound(f"dataset not found: {path}")
    if path.endswith(".csv"):
        if not csv_features:
            raise ConfigParse("--csv-features is required for CSV input")
        feat_cols = csv_features.split(",")
        attr_cols = csv_attributes.split(",") if csv_attributes else []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            feats, attrs, ys = [], [], []
            for row in reader:
                feats.append([float(row[c]) for c in feat_cols])
                attrs.append([float(row[c]) for c in attr_cols])
                ys.append(float(row[csv_target]) if csv_target else None)
        features = np.asarray(feats, dtype=np.float64)
        attributes = (np.asarray(attrs, dtype=np.float64)
                      if attr_cols else np.zeros((features.shape[0], 0)))
        y = np.asarray(ys, dtype=np.float64) if csv_target else None
        return features, attributes, y
    return read_jsonl(path)


def _ensure_outdir(out) -> str:
    os.makedirs(out, exist_ok=True)
    return out


def _log_run(out, command, wall_s) -> None:
    with open(os.path.join(out, "run.log"), "a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {command} "
                 f"wall={wall_s:.3f}s\n")


def _clip_bounds(cfg, args):
    if getattr(args, "no_clip", False):
        return None
    bounds = cfg.get("clip_bounds")
    if getattr(args, "clip", False) and bounds is None:
        bounds = [0.0, 100.0]
    return tuple(bounds) if bounds else None


def _checkpoint_sampler(args, cfg=None) -> SamplerConfig:
    base = experiments.build_sampler(cfg) if cfg else SamplerConfig()
    kind = args.sampler or base.kind
    tau = args.tau if args.tau is not None else base.tau
    eta = args.eta if args.eta is not None else base.eta
    return SamplerConfig(kind=kind, eta=eta, tau=tau,
                         step_selection=base.step_selection)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    t0 = time.monotonic()
    cfg = _load_config(args.config, args.seed)
    out = _ensure_outdir(args.out)
    if cfg.get("dataset"):
        features, attributes, y = _load_rows(
            cfg["dataset"], args.csv_features, args.csv_attributes,
            args.csv_target,
        )
        if y is None:
            raise LengthMismatch("training dataset has no targets")
        task_name = None
    else:
        _, data = experiments.resolve_dataset(cfg)
        features, attributes, y = data.features, data.attributes, data.y
        task_name = cfg["task"]
    sched = experiments.build_schedule(cfg)
    train_cfg = experiments.build_train_config(cfg)
    conditional = cfg["objective"] == "diffusion"
    net = experiments.build_net_config(
        cfg, features.shape[1], attributes.shape[1], conditional,
    )
    if conditional:
        result = train_diffusion(features, attributes, y, net, train_cfg, sched)
    else:
        result = train_point_regressor(features, attributes, y, net, train_cfg)
    meta = {
        "objective": cfg["objective"],
        "task": task_name,
        "seed": cfg["seed"],
        "steps": result.steps,
        "final_loss": result.final_loss,
        "best_val": result.best_val,
        "config_lock": cfg,
    }
    save_checkpoint(os.path.join(out, "checkpoint.json"), net, result.params,
                    result.normalizer, sched, meta)
    _write_csv(os.path.join(out, "loss.csv"), ["step", "loss", "val_crps"],
               result.history)
    _write_json(os.path.join(out, "config.lock"), cfg)
    _log_run(out, "train", time.monotonic() - t0)
    return 0


def _load_ck(path):
    if not os.path.exists(path):
        raise DatasetNotFound(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _context_for_checkpoint(ck, features, attributes):
    if features.shape[1] != ck.net_config.feature_dim:
        raise DimensionMismatch(
            f"checkpoint expects {ck.net_config.feature_dim} features, "
            f"rows have {features.shape[1]}"
        )
    if ck.net_config.attribute_dim == 0 and attributes.shape[1] > 0:
        warnings.warn(
            "checkpoint is vision-only (no attribute branch); "
            "input attributes are ignored"
        )
        attributes = np.zeros((features.shape[0], 0))
    elif attributes.shape[1] != ck.net_config.attribute_dim:
        raise DimensionMismatch(
            f"checkpoint expects {ck.net_config.attribute_dim} attributes, "
            f"rows have {attributes.shape[1]}"
        )
    return features, attributes


def cmd_sample(args) -> int:
    t0 = time.monotonic()
    cfg = _load_config(args.config, args.seed)
    out = _ensure_outdir(args.out)
    ck = _load_ck(args.checkpoint)
    features, attributes, _ = _load_rows(
        args.input, args.csv_features, args.csv_attributes, args.csv_target,
    )
    features, attributes = _context_for_checkpoint(ck, features, attributes)
    sampler_cfg = _checkpoint_sampler(args, cfg)
    k = args.k or cfg["n_posterior_samples"]
    sched = ck.schedule or experiments.build_schedule(cfg)
    stream = RandomStream(cfg["seed"]).derive(31)
    bounds = _clip_bounds(cfg, args)
    if ck.net_config.conditional:
        draws_n, trajs = sample_ensemble_rows(
            ck.net_config, ck.params, features, attributes, k, sampler_cfg,
            sched, stream, record_trajectories=args.trajectories,
        )
    else:
        y_hat = forward(ck.net_config, ck.params, None, None, features,
                        attributes)
        draws_n, trajs = y_hat[:, None], None
    draws = ck.normalizer.denormalize(draws_n)
    rows, sample_rows = [], []
    for i in range(draws.shape[0]):
        ens = summarize(draws[i], bounds=bounds)
        rows.append([i, ens.mean, ens.std, ens.clipped_mean, ens.oob_rate,
                     ens.k])
        for j in range(draws.shape[1]):
            sample_rows.append([i, j, draws[i, j]])
    _write_csv(os.path.join(out, "ensembles.csv"),
               ["id", "mean", "std", "clipped_mean", "oob_rate", "n_samples"],
               rows)
    _write_csv(os.path.join(out, "samples.csv"), ["id", "k", "y"], sample_rows)
    if args.trajectories and trajs is not None:
        ids = [f"{i}:{j}" for i in range(draws.shape[0]) for j in range(k)]
        write_trajectories_csv(trajs, ids,
                               os.path.join(out, "trajectories.csv"),
                               normalizer=ck.normalizer)
    _write_json(os.path.join(out, "config.lock"), cfg)
    _log_run(out, "sample", time.monotonic() - t0)
    return 0


def cmd_eval(args) -> int:
    t0 = time.monotonic()
    cfg = _load_config(args.config, args.seed)
    out = _ensure_outdir(args.out)
    ck = _load_ck(args.checkpoint)
    features, attributes, y = _load_rows(
        args.dataset, args.csv_features, args.csv_attributes,
        args.csv_target or "y",
    )
    if y is None or y.size == 0:
        raise LengthMismatch("evaluation dataset has no ground-truth targets")
    features, attributes = _context_for_checkpoint(ck, features, attributes)
    sampler_cfg = _checkpoint_sampler(args, cfg)
    k = args.k or cfg["n_posterior_samples"]
    sched = ck.schedule or experiments.build_schedule(cfg)
    bounds = _clip_bounds(cfg, args)
    result = experiments.evaluate_model(
        ck.net_config, ck.params, ck.normalizer, sched, features, attributes,
        y, k, sampler_cfg, RandomStream(cfg["seed"]).derive(32),
        bounds=bounds, dispersion_threshold=args.dispersion_threshold,
    )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "sampler": sampler_cfg.to_dict(),
        "n_posterior_samples": k,
        "denoiser_calls_per_item": result.denoiser_calls_per_item,
        **result.report.to_dict(),
    }
    _write_json(os.path.join(out, "metrics.json"), payload)
    _write_csv(
        os.path.join(out, "per_item.csv"),
        ["id", "y_true", "mean", "std", "crps", "oob_rate", "flagged"],
        [[it.index, it.y_true, it.mean, it.std, it.crps, it.oob_rate,
          int(it.flagged)] for it in result.items],
    )
    _write_json(os.path.join(out, "config.lock"), cfg)
    _log_run(out, "eval", time.monotonic() - t0)
    return 0


def cmd_ablate(args) -> int:
    t0 = time.monotonic()
    cfg = _load_config(args.config, args.seed)
    if args.task:
        cfg["task"] = args.task
    out = _ensure_outdir(args.out)
    rows = experiments.run_ablation(args.kind, cfg, n_eval=args.n_eval)
    _write_csv(
        os.path.join(out, "ablation.csv"),
        ["variant", "mae", "rmse", "r2", "crps", "denoiser_calls_per_item"],
        [[r.variant, r.mae, r.rmse, r.r2, r.crps, r.denoiser_calls_per_item]
         for r in rows],
    )
    _write_csv(os.path.join(out, "timing.csv"), ["variant", "wall_clock_s"],
               [[r.variant, r.wall_clock_s] for r in rows])
    _write_json(os.path.join(out, "config.lock"), cfg)
    _log_run(out, f"ablate:{args.kind}", time.monotonic() - t0)
    return 0


def cmd_oracle(args) -> int:
    t0 = time.monotonic()
    cfg = _load_config(args.config, args.seed)
    out = _ensure_outdir(args.out)
    sampler_cfg = _checkpoint_sampler(args, cfg)
    if args.sampler is None and args.tau is None:
        sampler_cfg = SamplerConfig(kind="ddim", eta=0.0, tau=50)
    report = experiments.oracle_soundness(
        args.task, sampler_cfg, n_samples=args.n, seed=cfg["seed"],
    )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "task": report.task,
        "sampler": report.sampler,
        "n_samples": report.n_samples,
        "w1_threshold": report.w1_threshold,
        "max_wasserstein1": report.max_w1,
        "all_modes_covered": report.all_modes_covered,
        "passed": report.passed,
        "contexts": [
            {
                "features": c.features,
                "attributes": c.attributes,
                "wasserstein1": c.wasserstein1,
                "mode_fractions": c.mode_fractions,
                "modes_covered": c.modes_covered,
            }
            for c in report.contexts
        ],
    }
    _write_json(os.path.join(out, "oracle.json"), payload)
    _log_run(out, "oracle", time.monotonic() - t0)
    return 0


def cmd_schedule_dump(args) -> int:
    t0 = time.monotonic()
    out = _ensure_outdir(args.out)
    sched = linear_schedule(args.T, args.beta_min, args.beta_max)
    write_schedule_csv(sched, os.path.join(out, "schedule.csv"))
    _log_run(out, "schedule-dump", time.monotonic() - t0)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genreg",
        description="Generative regression via conditional score diffusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        if config:
            p.add_argument("--config", default=None,
                           help="experiment config JSON")

    def sampler_flags(p):
        p.add_argument("--sampler", choices=["ddim", "ddpm"], default=None)
        p.add_argument("--tau", type=int, default=None)
        p.add_argument("--eta", type=float, default=None)

    def csv_flags(p):
        p.add_argument("--csv-features", default=None,
                       help="comma-separated feature columns for CSV input")
        p.add_argument("--csv-attributes", default=None)
        p.add_argument("--csv-target", default=None)

    def clip_flags(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--clip", action="store_true",
                       help="clip reported means into the physical range")
        g.add_argument("--no-clip", action="store_true")

    p = sub.add_parser("train", help="train a model from a config")
    common(p)
    csv_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="posterior-sample a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="rows (JSONL or CSV)")
    p.add_argument("--k", type=int, default=None, help="samples per row")
    p.add_argument("--trajectories", action="store_true",
                   help="export every (t, y_t) state")
    sampler_flags(p)
    csv_flags(p)
    clip_flags(p)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a checkpoint on labeled data")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--dispersion-threshold", type=float, default=None)
    sampler_flags(p)
    csv_flags(p)
    clip_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run a comparison study")
    common(p)
    p.add_argument("--kind", required=True,
                   choices=["paradigm", "sampler", "steps", "ensemble"])
    p.add_argument("--task", default=None)
    p.add_argument("--n-eval", type=int, default=256)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("oracle", help="sampler soundness vs analytic mixtures")
    common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--n", type=int, default=10000)
    sampler_flags(p)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("schedule-dump", help="dump the noise schedule as CSV")
    common(p, config=False)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--beta-min", type=float, default=1e-4)
    p.add_argument("--beta-max", type=float, default=0.02)
    p.set_defaults(fn=cmd_schedule_dump)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except GenRegError as exc:
        print(json.dumps({
            "error": {"type": type(exc).__name__, "message": str(exc)}
        }, sort_keys=True))
        return 1


if __name__ == "__main__":
    sys.exit(main())

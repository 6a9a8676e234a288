"""Posterior summarization and evaluation metrics.

The ensemble statistics are the plain Monte-Carlo mean and the unbiased
(K-1 denominator) standard deviation of the K terminal samples. CRPS uses
the standard empirical estimator

    CRPS = (1/K) sum_i |x_i - y|  -  (1/(2 K^2)) sum_{i,j} |x_i - x_j|,

not the "fair" variant (the two differ by K/(K-1) on the spread term).
Range clipping is applied to the reported mean only, never to the raw
samples or to CRPS inputs, so the out-of-bound rate stays observable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, spearmanr

from ._validation import require_same_length
from .errors import DegenerateVariance, EmptyEnsemble, LengthMismatch


@dataclass(frozen=True)
class PosteriorEnsemble:
    """K posterior draws for one item, with summary statistics."""

    samples: np.ndarray
    mean: float
    std: float | None          # None when K == 1
    clipped_mean: float
    oob_rate: float            # fraction of samples outside bounds (0 if unbounded)
    bounds: tuple | None

    @property
    def k(self) -> int:
        return int(self.samples.size)


def summarize(samples, bounds: tuple | None = None) -> PosteriorEnsemble:
    """Ensemble mean/std of K samples, plus clipped mean and oob rate.

    bounds=(lo, hi) turns on physical-range reporting: the mean is clamped
    into the range and the fraction of raw samples outside it is recorded.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size == 0:
        raise EmptyEnsemble("cannot summarize an empty ensemble")
    mean = float(np.mean(samples))
    std = float(np.std(samples, ddof=1)) if samples.size >= 2 else None
    if bounds is not None:
        lo, hi = float(bounds[0]), float(bounds[1])
        clipped = float(min(max(mean, lo), hi))
        oob = float(np.mean((samples < lo) | (samples > hi)))
        bounds = (lo, hi)
    else:
        clipped = mean
        oob = 0.0
    s = samples.copy()
    s.setflags(write=False)
    return PosteriorEnsemble(
        samples=s, mean=mean, std=std, clipped_mean=clipped,
        oob_rate=oob, bounds=bounds,
    )


def crps_empirical(samples, y_true: float) -> float:
    """Empirical CRPS of an ensemble forecast against one outcome.

    O(K log K) via the sorted-sample identity
    sum_{i,j} |x_i - x_j| = 2 * sum_i (2i - K + 1) * x_(i).
    Equals absolute error for K = 1.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise EmptyEnsemble("CRPS needs at least one sample")
    k = x.size
    term_err = float(np.mean(np.abs(x - float(y_true))))
    xs = np.sort(x)
    i = np.arange(k, dtype=np.float64)
    spread = float(np.sum((2.0 * i - k + 1.0) * xs)) / (k * k)
    return term_err - spread


def crps_gaussian(mu: float, sigma: float, y_true: float) -> float:
    """Closed-form CRPS of a Gaussian forecast N(mu, sigma^2)."""
    if sigma <= 0:
        raise DegenerateVariance("sigma must be positive")
    z = (y_true - mu) / sigma
    return float(sigma * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z)
                          - 1.0 / np.sqrt(np.pi)))


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    rmse: float
    r2: float
    crps: float | None
    n: int

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "rmse": self.rmse,
            "r2": self.r2,
            "crps": self.crps,
            "n": self.n,
        }


def point_metrics(preds, truths, crps: float | None = None) -> MetricsReport:
    """MAE / RMSE / R^2 over paired predictions and ground truth.

    R^2 = 1 - SS_res / SS_tot; constant truths make it undefined and raise
    DegenerateVariance rather than returning NaN.
    """
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    truths = np.asarray(truths, dtype=np.float64).reshape(-1)
    require_same_length(preds, truths, "preds", "truths")
    if preds.size < 2:
        raise LengthMismatch("need at least 2 pairs for R^2")
    err = preds - truths
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    ss_tot = float(np.sum((truths - truths.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateVariance("all truths equal; R^2 undefined")
    r2 = 1.0 - float(np.sum(err ** 2)) / ss_tot
    return MetricsReport(mae=mae, rmse=rmse, r2=r2, crps=crps, n=preds.size)


@dataclass(frozen=True)
class ReliabilityReport:
    flagged: np.ndarray                 # bool per item: std above threshold
    sigma_error_spearman: float | None  # None when correlation is undefined
    mean_abs_err_flagged: float | None
    mean_abs_err_unflagged: float | None
    threshold: float


def reliability_report(ensembles, truths, dispersion_threshold: float) -> ReliabilityReport:
    """Flag high-dispersion items and relate dispersion to actual error.

    Reports the Spearman correlation between ensemble std and absolute error
    of the ensemble mean; the correlation is reported as absent (None) when
    either quantity is constant.
    """
    ensembles = list(ensembles)
    truths = np.asarray(truths, dtype=np.float64).reshape(-1)
    require_same_length(ensembles, truths, "ensembles", "truths")
    if len(ensembles) == 0:
        raise EmptyEnsemble("reliability report needs at least one item")
    stds = np.array(
        [e.std if e.std is not None else 0.0 for e in ensembles], dtype=np.float64
    )
    errs = np.abs(np.array([e.mean for e in ensembles]) - truths)
    flagged = stds > dispersion_threshold
    corr = None
    if len(ensembles) >= 2 and np.ptp(stds) > 0 and np.ptp(errs) > 0:
        rho = spearmanr(stds, errs).statistic
        corr = float(rho) if np.isfinite(rho) else None
    mean_f = float(errs[flagged].mean()) if flagged.any() else None
    mean_u = float(errs[~flagged].mean()) if (~flagged).any() else None
    return ReliabilityReport(
        flagged=flagged,
        sigma_error_spearman=corr,
        mean_abs_err_flagged=mean_f,
        mean_abs_err_unflagged=mean_u,
        threshold=float(dispersion_threshold),
    )

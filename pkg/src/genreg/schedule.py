"""Discrete variance-preserving noise schedule.

The continuous forward SDE dy = -0.5*beta(t)*y dt + sqrt(beta(t)) dw is
realized as the usual T-step discretization with per-step variances beta_t.
Step indices are 1-based in the public contract; t=0 is reserved for the
clean sample, with alpha_bar(0) defined as 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidRange, StepOutOfRange


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances and their cumulative products.

    beta[i], alpha[i], alpha_bar[i] refer to step t = i + 1. The arrays are
    read-only; all query methods are pure, so one schedule can be shared
    freely across threads.
    """

    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise InvalidRange("beta must be a nonempty 1-D array")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise InvalidRange("every beta_t must lie in (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        for arr in (beta, alpha, alpha_bar):
            arr.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @property
    def T(self) -> int:
        return self.beta.shape[0]

    def _check_step(self, t: int, lo: int = 1) -> int:
        t = int(t)
        if not lo <= t <= self.T:
            raise StepOutOfRange(f"step t={t} outside [{lo}, {self.T}]")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check_step(t) - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check_step(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative product alpha_bar_t, with alpha_bar_0 := 1."""
        t = self._check_step(t, lo=0)
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])

    def perturb(self, y0, t: int, eps):
        """Forward marginal: y_t = sqrt(ab_t)*y0 + sqrt(1-ab_t)*eps.

        y0 and eps may be scalars or equal-shape arrays; t is one step index.
        """
        ab = self.alpha_bar_at(self._check_step(t))
        y0 = np.asarray(y0, dtype=np.float64)
        eps = np.asarray(eps, dtype=np.float64)
        if not np.all(np.isfinite(eps)):
            raise InvalidRange("eps must be finite")
        out = np.sqrt(ab) * y0 + np.sqrt(1.0 - ab) * eps
        return float(out) if out.ndim == 0 else out

    def snr(self, t: int) -> float:
        """Signal-to-noise ratio alpha_bar_t / (1 - alpha_bar_t)."""
        ab = self.alpha_bar_at(self._check_step(t))
        return ab / (1.0 - ab)

    def to_dict(self) -> dict:
        return {
            "kind": "linear",
            "T": self.T,
            "beta_min": float(self.beta[0]),
            "beta_max": float(self.beta[-1]),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return linear_schedule(int(d["T"]), float(d["beta_min"]), float(d["beta_max"]))


def linear_schedule(T: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Linear beta interpolation inclusive of both endpoints over T points."""
    if T < 1:
        raise InvalidRange(f"T must be >= 1, got {T}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise InvalidRange(
            f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
        )
    if T == 1:
        beta = np.array([beta_min], dtype=np.float64)
    else:
        beta = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    return NoiseSchedule(beta=beta)


def write_schedule_csv(sched: NoiseSchedule, path) -> None:
    """Dump (t, beta, alpha_bar, snr) rows for inspection."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "beta", "alpha_bar", "snr"])
        for t in range(1, sched.T + 1):
            writer.writerow([
                t,
                repr(sched.beta_at(t)),
                repr(sched.alpha_bar_at(t)),
                repr(sched.snr(t)),
            ])

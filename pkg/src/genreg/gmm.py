"""One-dimensional Gaussian mixtures with closed-form diffusion identities.

A mixture sum_i w_i N(mu_i, s_i^2) pushed through the forward perturbation at
step t stays a mixture with components N(sqrt(ab_t)*mu_i, ab_t*s_i^2 + 1-ab_t),
so its score (and hence the ideal noise prediction) is available in closed
form. That makes these mixtures the independent oracle for every reverse
sampler in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import DegenerateMixture
from .rng import RandomStream
from .schedule import NoiseSchedule

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianMixture1D:
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.asarray(self.means, dtype=np.float64).reshape(-1)
        s = np.asarray(self.stds, dtype=np.float64).reshape(-1)
        if not (w.size == mu.size == s.size) or w.size < 1:
            raise DegenerateMixture("weights/means/stds must have equal length >= 1")
        if np.any(s <= 0.0):
            raise DegenerateMixture("component stds must be positive")
        if np.any(w < 0.0) or abs(float(w.sum()) - 1.0) > 1e-9:
            raise DegenerateMixture("weights must be nonnegative and sum to 1")
        for arr in (w, mu, s):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", s)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def mean(self) -> float:
        return float(np.sum(self.weights * self.means))

    def variance(self) -> float:
        m = self.mean()
        second = np.sum(self.weights * (self.stds ** 2 + self.means ** 2))
        return float(second - m * m)

    def std(self) -> float:
        return float(np.sqrt(self.variance()))

    def pdf(self, y):
        y = np.asarray(y, dtype=np.float64)
        z = (y[..., None] - self.means) / self.stds
        comp = _INV_SQRT_2PI * np.exp(-0.5 * z * z) / self.stds
        out = np.sum(self.weights * comp, axis=-1)
        return float(out) if out.ndim == 0 else out

    def cdf(self, y):
        y = np.asarray(y, dtype=np.float64)
        z = (y[..., None] - self.means) / self.stds
        comp = 0.5 * (1.0 + erf(z / _SQRT2))
        out = np.sum(self.weights * comp, axis=-1)
        return float(out) if out.ndim == 0 else out

    def score(self, y):
        """d/dy log pdf(y): posterior-weighted Gaussian scores."""
        y = np.asarray(y, dtype=np.float64)
        z = (y[..., None] - self.means) / self.stds
        log_comp = -0.5 * z * z - np.log(self.stds) + np.log(self.weights)
        log_comp -= np.max(log_comp, axis=-1, keepdims=True)
        resp = np.exp(log_comp)
        resp /= np.sum(resp, axis=-1, keepdims=True)
        out = np.sum(resp * (-(y[..., None] - self.means) / self.stds ** 2), axis=-1)
        return float(out) if out.ndim == 0 else out

    def sample(self, stream: RandomStream, n: int) -> np.ndarray:
        gen = stream.generator()
        ix = gen.choice(self.n_components, size=n, p=self.weights)
        return self.means[ix] + self.stds[ix] * gen.standard_normal(n)

    def perturbed(self, sched: NoiseSchedule, t: int) -> "GaussianMixture1D":
        """Mixture of the forward marginals at step t (t=0 returns self)."""
        ab = sched.alpha_bar_at(t)
        return GaussianMixture1D(
            weights=self.weights,
            means=np.sqrt(ab) * self.means,
            stds=np.sqrt(ab * self.stds ** 2 + 1.0 - ab),
        )

    def affine(self, center: float, scale: float) -> "GaussianMixture1D":
        """Distribution of (X - center) / scale; scale must be positive."""
        if scale <= 0:
            raise DegenerateMixture("scale must be positive")
        return GaussianMixture1D(
            weights=self.weights,
            means=(self.means - center) / scale,
            stds=self.stds / scale,
        )

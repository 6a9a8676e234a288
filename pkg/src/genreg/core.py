"""Target normalization and conditioning context.

The diffusion process runs in a model space where the terminal prior is
N(0, 1), so raw targets are mapped by an affine, exactly invertible
normalizer fitted on the training split. Conditioning information is a pair
(features, attributes); an empty attribute vector selects vision-only mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_vector, require_nonempty
from .errors import DegenerateVariance, DimensionMismatch, InvalidRange


@dataclass(frozen=True)
class TargetNormalizer:
    """Affine map between physical target units and model space."""

    center: float
    scale: float

    def __post_init__(self):
        if not np.isfinite(self.center) or not np.isfinite(self.scale):
            raise InvalidRange("normalizer parameters must be finite")
        if self.scale <= 0:
            raise InvalidRange(f"scale must be positive, got {self.scale}")

    def normalize(self, y):
        return (np.asarray(y, dtype=np.float64) - self.center) / self.scale

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * self.scale + self.center

    def to_dict(self) -> dict:
        return {"center": self.center, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetNormalizer":
        return cls(center=float(d["center"]), scale=float(d["scale"]))

    @classmethod
    def identity(cls) -> "TargetNormalizer":
        return cls(center=0.0, scale=1.0)


def fit_normalizer(targets) -> TargetNormalizer:
    """Fit center/scale so the given targets map to mean 0, std 1.

    Uses the population (1/N) standard deviation. Raises EmptyDataset on an
    empty list and DegenerateVariance when all targets coincide.
    """
    require_nonempty(targets, "targets")
    y = as_vector(targets, "targets")
    center = float(np.mean(y))
    scale = float(np.std(y))
    if scale == 0.0:
        raise DegenerateVariance("all targets are identical; cannot normalize")
    return TargetNormalizer(center=center, scale=scale)


@dataclass(frozen=True)
class ConditioningContext:
    """One row of conditioning evidence: feature vector plus attributes.

    d_a = 0 (empty attributes) means vision-only mode. Both arrays are
    float64, finite, and frozen read-only after construction.
    """

    features: np.ndarray
    attributes: np.ndarray

    def __post_init__(self):
        feats = as_vector(self.features, "features")
        if feats.shape[0] < 1:
            raise DimensionMismatch("features must have length >= 1")
        attrs = np.asarray(self.attributes, dtype=np.float64).reshape(-1)
        if attrs.size and not np.all(np.isfinite(attrs)):
            raise DimensionMismatch("attributes contain non-finite values")
        feats.setflags(write=False)
        attrs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "attributes", attrs)

    @property
    def d_v(self) -> int:
        return self.features.shape[0]

    @property
    def d_a(self) -> int:
        return self.attributes.shape[0]

"""Synthetic conditional-distribution tasks with exact posterior oracles.

Each task maps a context (features, attributes) to a Gaussian mixture over
the scalar target through piecewise-affine rules, so the true conditional
mean, std, density, and CDF are all closed-form. The four built-ins probe
the behaviors a generative regressor must reproduce:

- A: unimodal with a sharp, context-dependent mean;
- B: symmetric bimodal (the conditional mean falls in a density trough);
- C: heteroscedastic (noise level switches on one feature's sign);
- D: bimodal where only the attribute disambiguates the mode weights.

Targets live in model-scale units (|y| <~ 4); a fixed affine wrapper maps
them onto a [0, 100] physical range for end-to-end demos.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._validation import require_nonempty
from .errors import EmptySample, InvalidRange, UnknownTask
from .gmm import GaussianMixture1D
from .rng import RandomStream

PHYSICAL_CENTER = 55.0
PHYSICAL_SCALE = 10.0


def to_physical(y):
    return PHYSICAL_CENTER + PHYSICAL_SCALE * np.asarray(y, dtype=np.float64)


def from_physical(y):
    return (np.asarray(y, dtype=np.float64) - PHYSICAL_CENTER) / PHYSICAL_SCALE


@dataclass(frozen=True)
class GMMTaskSpec:
    """Piecewise-affine map from context to mixture parameters.

    Component means: mean_offsets[i] + features . mean_slope (shared slope).
    Component stds: std_low[i] where features[hetero_index] <= hetero_pivot,
    std_high[i] elsewhere (equal tuples = homoscedastic).
    Weights: weight_base[i] + attributes[0] * weight_attr_slope[i]; the
    attribute values are drawn from (attribute_values, attribute_probs).
    """

    name: str
    feature_dim: int
    attribute_dim: int
    mean_offsets: tuple
    mean_slope: tuple
    std_low: tuple
    std_high: tuple
    weight_base: tuple
    weight_attr_slope: tuple
    hetero_index: int = 0
    hetero_pivot: float = 0.0
    attribute_values: tuple = ()
    attribute_probs: tuple = ()

    def __post_init__(self):
        m = len(self.mean_offsets)
        if m < 1:
            raise InvalidRange("need at least one component")
        for fieldname in ("std_low", "std_high", "weight_base", "weight_attr_slope"):
            if len(getattr(self, fieldname)) != m:
                raise InvalidRange(f"{fieldname} must have {m} entries")
        if len(self.mean_slope) != self.feature_dim:
            raise InvalidRange("mean_slope must match feature_dim")
        if abs(sum(self.weight_base) - 1.0) > 1e-12:
            raise InvalidRange("weight_base must sum to 1")
        if abs(sum(self.weight_attr_slope)) > 1e-12:
            raise InvalidRange("weight_attr_slope must sum to 0")

    @property
    def n_components(self) -> int:
        return len(self.mean_offsets)

    def mixture_params(self, features: np.ndarray, attributes: np.ndarray):
        """Vectorized (weights, means, stds), each (n, m), for context rows."""
        feats = np.asarray(features, dtype=np.float64).reshape(-1, self.feature_dim)
        n = feats.shape[0]
        attrs = np.asarray(attributes, dtype=np.float64).reshape(n, -1)
        means = (feats @ np.asarray(self.mean_slope))[:, None] + np.asarray(
            self.mean_offsets
        )
        low = feats[:, self.hetero_index] <= self.hetero_pivot
        stds = np.where(
            low[:, None], np.asarray(self.std_low), np.asarray(self.std_high)
        )
        weights = np.broadcast_to(
            np.asarray(self.weight_base), (n, self.n_components)
        ).copy()
        if self.attribute_dim > 0 and attrs.shape[1] > 0:
            weights = weights + attrs[:, :1] * np.asarray(self.weight_attr_slope)
        if np.any(weights < -1e-12):
            raise InvalidRange("attribute pushed a mixture weight below 0")
        weights = np.clip(weights, 0.0, None)
        weights /= weights.sum(axis=1, keepdims=True)
        return weights, means, stds

    def mixture(self, features, attributes=()) -> GaussianMixture1D:
        """Exact conditional mixture at one context row."""
        w, mu, s = self.mixture_params(
            np.asarray(features, dtype=np.float64).reshape(1, -1),
            np.asarray(attributes, dtype=np.float64).reshape(1, -1),
        )
        return GaussianMixture1D(weights=w[0], means=mu[0], stds=s[0])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "feature_dim": self.feature_dim,
            "attribute_dim": self.attribute_dim,
            "mean_offsets": list(self.mean_offsets),
            "mean_slope": list(self.mean_slope),
            "std_low": list(self.std_low),
            "std_high": list(self.std_high),
            "weight_base": list(self.weight_base),
            "weight_attr_slope": list(self.weight_attr_slope),
            "hetero_index": self.hetero_index,
            "hetero_pivot": self.hetero_pivot,
            "attribute_values": list(self.attribute_values),
            "attribute_probs": list(self.attribute_probs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GMMTaskSpec":
        d = dict(d)
        for key in ("mean_offsets", "mean_slope", "std_low", "std_high",
                    "weight_base", "weight_attr_slope", "attribute_values",
                    "attribute_probs"):
            d[key] = tuple(d[key])
        return cls(**d)


_TASKS = {
    "A": GMMTaskSpec(
        name="A", feature_dim=2, attribute_dim=0,
        mean_offsets=(0.0,), mean_slope=(1.3, 0.65),
        std_low=(0.3,), std_high=(0.3,),
        weight_base=(1.0,), weight_attr_slope=(0.0,),
    ),
    "B": GMMTaskSpec(
        name="B", feature_dim=2, attribute_dim=0,
        mean_offsets=(-1.0, 1.0), mean_slope=(0.3, 0.0),
        std_low=(0.3, 0.3), std_high=(0.3, 0.3),
        weight_base=(0.5, 0.5), weight_attr_slope=(0.0, 0.0),
    ),
    "C": GMMTaskSpec(
        name="C", feature_dim=2, attribute_dim=0,
        mean_offsets=(0.0,), mean_slope=(0.0, 0.5),
        std_low=(0.25,), std_high=(1.0,),
        weight_base=(1.0,), weight_attr_slope=(0.0,),
    ),
    "D": GMMTaskSpec(
        name="D", feature_dim=2, attribute_dim=1,
        mean_offsets=(-1.0, 1.0), mean_slope=(0.0, 0.0),
        std_low=(0.3, 0.3), std_high=(0.3, 0.3),
        weight_base=(0.5, 0.5), weight_attr_slope=(-0.45, 0.45),
        attribute_values=(-1.0, 0.0, 1.0), attribute_probs=(0.45, 0.10, 0.45),
    ),
}


def make_task(name: str) -> GMMTaskSpec:
    key = str(name).upper()
    if key not in _TASKS:
        raise UnknownTask(f"unknown task {name!r}; choose from {sorted(_TASKS)}")
    return _TASKS[key]


def oracle_posterior(spec: GMMTaskSpec, features, attributes=()) -> GaussianMixture1D:
    return spec.mixture(features, attributes)


@dataclass(frozen=True)
class SynthDataset:
    features: np.ndarray    # (n, d_v)
    attributes: np.ndarray  # (n, d_a)
    y: np.ndarray           # (n,)
    seed: int
    task_name: str
    physical: bool = False

    @property
    def n(self) -> int:
        return int(self.y.shape[0])


def generate(spec: GMMTaskSpec, n: int, seed: int, physical: bool = False) -> SynthDataset:
    """Draw n context rows and one target each from its exact conditional.

    Generator consumption order is fixed (features, attributes, component
    choice, component noise), so a seed pins the dataset byte-for-byte.
    """
    if n < 1:
        raise InvalidRange("n must be >= 1")
    gen = RandomStream(seed=seed, stream_id=0).generator()
    feats = gen.uniform(-1.0, 1.0, size=(n, spec.feature_dim))
    if spec.attribute_dim > 0:
        vals = np.asarray(spec.attribute_values, dtype=np.float64)
        probs = np.asarray(spec.attribute_probs, dtype=np.float64)
        attrs = vals[gen.choice(vals.size, size=(n, spec.attribute_dim), p=probs)]
    else:
        attrs = np.zeros((n, 0), dtype=np.float64)
    w, mu, s = spec.mixture_params(feats, attrs)
    u = gen.random(n)
    comp = (u[:, None] > np.cumsum(w, axis=1)).sum(axis=1)
    comp = np.minimum(comp, spec.n_components - 1)
    rows = np.arange(n)
    y = mu[rows, comp] + s[rows, comp] * gen.standard_normal(n)
    if physical:
        y = to_physical(y)
    return SynthDataset(
        features=feats, attributes=attrs, y=y, seed=seed,
        task_name=spec.name, physical=physical,
    )


def sample_posterior(spec: GMMTaskSpec, features, attributes, n: int,
                     stream: RandomStream) -> np.ndarray:
    """n ground-truth draws from the exact conditional at one context."""
    return spec.mixture(features, attributes).sample(stream, n)


def wasserstein1(samples_a, samples_b) -> float:
    """W1 distance between empirical 1-D distributions.

    Equal sizes: mean absolute difference of the sorted samples. Unequal:
    both sides are quantile-matched onto a common midpoint grid first.
    """
    a = np.asarray(samples_a, dtype=np.float64).reshape(-1)
    b = np.asarray(samples_b, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise EmptySample("wasserstein1 needs nonempty samples on both sides")
    if a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    m = max(a.size, b.size)
    q = (np.arange(m) + 0.5) / m
    return float(np.mean(np.abs(np.quantile(a, q) - np.quantile(b, q))))


@dataclass(frozen=True)
class ModeCoverage:
    fractions: np.ndarray  # fraction of samples within radius of each mode
    covered: np.ndarray    # fraction >= half the mode's oracle weight
    radius: float

    @property
    def all_covered(self) -> bool:
        return bool(np.all(self.covered))


def mode_coverage(samples, mixture: GaussianMixture1D, radius: float) -> ModeCoverage:
    """Per-mode hit fraction of the samples within `radius` of each mean."""
    if radius <= 0:
        raise InvalidRange("radius must be positive")
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    require_nonempty(samples, "samples")
    fractions = np.array([
        float(np.mean(np.abs(samples - mu) <= radius)) for mu in mixture.means
    ])
    covered = fractions >= mixture.weights / 2.0
    return ModeCoverage(fractions=fractions, covered=covered, radius=float(radius))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_jsonl(dataset: SynthDataset, path) -> None:
    with open(path, "w") as fh:
        for i in range(dataset.n):
            row = {
                "features": [float(v) for v in dataset.features[i]],
                "attributes": [float(v) for v in dataset.attributes[i]],
                "y": float(dataset.y[i]),
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path):
    """Load rows of {"features": [...], "attributes": [...], "y": v}."""
    feats, attrs, ys = [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            feats.append(row["features"])
            attrs.append(row.get("attributes", []))
            ys.append(row.get("y"))
    features = np.asarray(feats, dtype=np.float64)
    attributes = np.asarray(attrs, dtype=np.float64)
    if attributes.size == 0:
        attributes = np.zeros((features.shape[0], 0), dtype=np.float64)
    has_y = all(v is not None for v in ys)
    y = np.asarray(ys, dtype=np.float64) if has_y else None
    return features, attributes, y

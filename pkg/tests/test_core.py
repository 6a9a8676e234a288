import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genreg.core import ConditioningContext, TargetNormalizer, fit_normalizer
from genreg.errors import DegenerateVariance, DimensionMismatch, EmptyDataset, InvalidRange


def test_fit_normalizer_simple_pair():
    norm = fit_normalizer([0.0, 100.0])
    assert norm.center == 50.0
    assert norm.scale == 50.0


def test_fit_normalizer_maps_to_zero_one():
    y = np.array([3.0, 3.0, 3.0, 50.0])  # repeated value plus one outlier
    norm = fit_normalizer(y)
    z = norm.normalize(y)
    assert abs(z.mean()) < 1e-12
    assert abs(z.std() - 1.0) < 1e-6
    # matches the brute-force moment formulas
    assert norm.center == pytest.approx(y.sum() / 4)
    assert norm.scale == pytest.approx(np.sqrt(((y - y.mean()) ** 2).mean()))


def test_fit_normalizer_rejects_empty_and_degenerate():
    with pytest.raises(EmptyDataset):
        fit_normalizer([])
    with pytest.raises(DegenerateVariance):
        fit_normalizer([5.0, 5.0, 5.0])


def test_normalizer_requires_positive_scale():
    with pytest.raises(InvalidRange):
        TargetNormalizer(center=0.0, scale=0.0)
    with pytest.raises(InvalidRange):
        TargetNormalizer(center=0.0, scale=-1.0)


@settings(max_examples=100, deadline=None)
@given(
    # fitted-normalizer regime: center within ~1e3 spreads of zero, so the
    # affine round trip stays clear of float64 cancellation
    ratio=st.floats(-1e3, 1e3),
    scale=st.floats(1e-3, 1e4),
    z=st.floats(-1e3, 1e3),
)
def test_round_trip_exact(ratio, scale, z):
    norm = TargetNormalizer(center=ratio * scale, scale=scale)
    if abs(norm.denormalize(z)) > 1e6:
        return
    back = norm.normalize(norm.denormalize(z))
    assert back == pytest.approx(z, rel=1e-12, abs=1e-12 * max(1.0, abs(ratio)))


def test_normalizer_dict_round_trip():
    norm = TargetNormalizer(center=55.0, scale=11.5)
    assert TargetNormalizer.from_dict(norm.to_dict()) == norm


def test_context_basic():
    ctx = ConditioningContext(features=[1.0, 2.0], attributes=[0.5])
    assert ctx.d_v == 2
    assert ctx.d_a == 1
    assert not ctx.features.flags.writeable


def test_context_vision_only_allows_empty_attributes():
    ctx = ConditioningContext(features=[1.0], attributes=[])
    assert ctx.d_a == 0


def test_context_rejects_bad_inputs():
    with pytest.raises(DimensionMismatch):
        ConditioningContext(features=[], attributes=[])
    with pytest.raises(DimensionMismatch):
        ConditioningContext(features=[np.nan], attributes=[])
    with pytest.raises(DimensionMismatch):
        ConditioningContext(features=[1.0], attributes=[np.inf])

import numpy as np
import pytest

from genreg.errors import EmptySample, InvalidRange, UnknownTask
from genreg.gmm import GaussianMixture1D
from genreg.rng import RandomStream
from genreg.synthetic import (
    GMMTaskSpec,
    from_physical,
    generate,
    make_task,
    mode_coverage,
    oracle_posterior,
    read_jsonl,
    sample_posterior,
    to_physical,
    wasserstein1,
    write_jsonl,
)


def test_make_task_names():
    for name in "ABCD":
        spec = make_task(name)
        assert spec.name == name
        assert spec.feature_dim == 2
    assert make_task("b").name == "B"
    with pytest.raises(UnknownTask):
        make_task("Z")


def test_task_b_symmetric_posterior_mean():
    spec = make_task("B")
    for x1 in (-0.8, 0.0, 0.5):
        mix = oracle_posterior(spec, [x1, 0.2], ())
        assert mix.mean() == pytest.approx(0.3 * x1, abs=1e-12)


def test_task_a_single_component_std():
    spec = make_task("A")
    mix = oracle_posterior(spec, [0.1, -0.9], ())
    assert mix.n_components == 1
    assert mix.std() == pytest.approx(0.3)


def test_task_b_mean_sits_in_density_trough():
    spec = make_task("B")
    mix = oracle_posterior(spec, [0.4, 0.0], ())
    at_mean = mix.pdf(mix.mean())
    peak = max(mix.pdf(mix.means[0]), mix.pdf(mix.means[1]))
    assert at_mean < 0.1 * peak


def test_task_c_heteroscedastic_split():
    spec = make_task("C")
    low = oracle_posterior(spec, [-0.5, 0.0], ())
    high = oracle_posterior(spec, [0.5, 0.0], ())
    assert low.std() == pytest.approx(0.25)
    assert high.std() == pytest.approx(1.0)


def test_task_d_attribute_flips_mean():
    spec = make_task("D")
    x = [0.3, -0.3]
    neg = oracle_posterior(spec, x, [-1.0])
    mid = oracle_posterior(spec, x, [0.0])
    pos = oracle_posterior(spec, x, [1.0])
    assert neg.mean() < -0.5
    assert pos.mean() > 0.5
    assert pos.mean() == pytest.approx(-neg.mean(), abs=1e-12)
    assert mid.mean() == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(pos.weights, [0.05, 0.95])


def test_mixture_variance_formula_example():
    mix = GaussianMixture1D(weights=[0.5, 0.5], means=[-1, 1], stds=[0.1, 0.1])
    assert mix.std() == pytest.approx(np.sqrt(1.01))


def test_generate_reproducible():
    spec = make_task("B")
    a = generate(spec, 500, seed=3)
    b = generate(spec, 500, seed=3)
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.features, b.features)
    c = generate(spec, 500, seed=4)
    assert not np.array_equal(a.y, c.y)


def test_generate_degenerate_weights_single_component():
    spec = GMMTaskSpec(
        name="one", feature_dim=1, attribute_dim=0,
        mean_offsets=(2.0, -5.0), mean_slope=(0.0,),
        std_low=(0.1, 0.1), std_high=(0.1, 0.1),
        weight_base=(1.0, 0.0), weight_attr_slope=(0.0, 0.0),
    )
    data = generate(spec, 2000, seed=5)
    assert np.all(np.abs(data.y - 2.0) < 1.0)  # only component 1 is drawn


def test_fixed_context_moments_converge_to_oracle():
    spec = make_task("B")
    ctx_f, ctx_a = np.array([0.25, -0.6]), np.zeros(0)
    mix = oracle_posterior(spec, ctx_f, ctx_a)
    draws = sample_posterior(spec, ctx_f, ctx_a, 10**5, RandomStream(6))
    assert draws.mean() == pytest.approx(mix.mean(), abs=0.01 * max(1, abs(mix.mean())) + 0.01)
    assert draws.std() == pytest.approx(mix.std(), rel=0.01)


def test_generated_pooled_moments_match_oracle_within_3_sigma():
    for name in "ABCD":
        spec = make_task(name)
        n = 40000
        data = generate(spec, n, seed=11)
        w, mu, s = spec.mixture_params(data.features, data.attributes)
        cond_mean = (w * mu).sum(axis=1)
        cond_second = (w * (s**2 + mu**2)).sum(axis=1)
        pooled_mean = cond_mean.mean()
        pooled_var = cond_second.mean() - pooled_mean**2
        se_mean = np.sqrt(pooled_var / n)
        assert abs(data.y.mean() - pooled_mean) < 3 * se_mean + 1e-9, name
        assert data.y.std() == pytest.approx(np.sqrt(pooled_var), rel=0.05), name


def test_physical_wrapper_round_trip():
    spec = make_task("A")
    data = generate(spec, 200, seed=9, physical=True)
    assert data.physical
    assert np.all(data.y > 0) and np.all(data.y < 110)
    back = from_physical(data.y)
    assert np.allclose(to_physical(back), data.y, rtol=1e-15)


# --- W1 ------------------------------------------------------------------------

def test_w1_identical_sets_zero():
    x = np.array([0.3, -1.0, 2.0])
    assert wasserstein1(x, x.copy()) == 0.0


def test_w1_uniform_shift():
    assert wasserstein1([0.0, 1.0], [1.0, 2.0]) == pytest.approx(1.0)


def test_w1_shifted_gaussians():
    a = RandomStream(1).normal(200000)
    b = RandomStream(2).normal(200000) + 0.5
    assert wasserstein1(a, b) == pytest.approx(0.5, rel=0.05)


def test_w1_unequal_lengths_quantile_matched():
    a = RandomStream(3).normal(5000)
    b = RandomStream(4).normal(9000) + 1.0
    assert wasserstein1(a, b) == pytest.approx(1.0, rel=0.1)


def test_w1_empty_raises():
    with pytest.raises(EmptySample):
        wasserstein1([], [1.0])


# --- mode coverage ---------------------------------------------------------------

def test_mode_coverage_exact_hits():
    mix = GaussianMixture1D(weights=[0.5, 0.5], means=[-1, 1], stds=[0.1, 0.1])
    samples = np.array([-1.0] * 10 + [1.0] * 10)
    cov = mode_coverage(samples, mix, radius=0.2)
    assert np.allclose(cov.fractions, 0.5)
    assert cov.all_covered


def test_mode_coverage_missing_mode():
    mix = GaussianMixture1D(weights=[0.5, 0.5], means=[-1, 1], stds=[0.1, 0.1])
    cov = mode_coverage(np.full(20, -1.0), mix, radius=0.2)
    assert cov.covered[0]
    assert not cov.covered[1]
    assert not cov.all_covered


def test_mode_coverage_radius_validation():
    mix = GaussianMixture1D(weights=[1.0], means=[0.0], stds=[1.0])
    with pytest.raises(InvalidRange):
        mode_coverage([0.0], mix, radius=0.0)


# --- serialization ----------------------------------------------------------------

def test_jsonl_round_trip(tmp_path):
    spec = make_task("D")
    data = generate(spec, 50, seed=13)
    path = tmp_path / "rows.jsonl"
    write_jsonl(data, path)
    feats, attrs, y = read_jsonl(path)
    assert np.allclose(feats, data.features)
    assert np.allclose(attrs, data.attributes)
    assert np.allclose(y, data.y)


def test_jsonl_rows_without_targets(tmp_path):
    path = tmp_path / "rows.jsonl"
    path.write_text('{"features": [0.1, 0.2], "attributes": []}\n')
    feats, attrs, y = read_jsonl(path)
    assert feats.shape == (1, 2)
    assert attrs.shape == (1, 0)
    assert y is None


def test_task_spec_dict_round_trip():
    spec = make_task("D")
    clone = GMMTaskSpec.from_dict(spec.to_dict())
    assert clone == spec

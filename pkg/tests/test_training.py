import numpy as np
import pytest

from genreg.errors import DivergedTraining, EmptyDataset, InvalidRange
from genreg.nets import MLPConfig, init_params, param_shapes
from genreg.rng import RandomStream
from genreg.schedule import linear_schedule
from genreg.training import (
    AdamState,
    TrainConfig,
    adamw_step,
    clip_gradients,
    dsm_batch_grad,
    dsm_batch_loss,
    mse_batch_grad,
    smoothed_losses,
    train_diffusion,
    train_point_regressor,
)


@pytest.fixture(scope="module")
def sched():
    return linear_schedule(1000, 1e-4, 0.02)


NET = MLPConfig(feature_dim=2, attribute_dim=0, hidden=(32, 32), time_dim=8)


def _toy_batch(n=512, seed=2):
    gen = RandomStream(seed).generator()
    feats = gen.uniform(-1, 1, size=(n, 2))
    attrs = np.zeros((n, 0))
    y0 = 0.5 * feats[:, 0] + 0.1 * gen.standard_normal(n)
    return y0, feats, attrs


# --- dsm loss -----------------------------------------------------------------

def test_zero_network_loss_is_unit_variance(sched):
    y0, feats, attrs = _toy_batch(n=20000)
    params = {k: np.zeros(s) for k, s in param_shapes(NET).items()}
    loss, records = dsm_batch_loss(NET, params, y0, feats, attrs, sched,
                                   RandomStream(3))
    # E||eps - 0||^2 = Var(eps) = 1
    assert loss == pytest.approx(1.0, abs=0.05)
    assert records["t"].min() >= 1 and records["t"].max() <= 1000
    assert np.allclose(
        records["y_t"],
        np.sqrt(sched.alpha_bar[records["t"] - 1]) * y0
        + np.sqrt(1 - sched.alpha_bar[records["t"] - 1]) * records["eps"],
    )


def test_oracle_denoiser_zero_loss(sched):
    # a reference denoiser that inverts the perturbation exactly
    y0, feats, attrs = _toy_batch(n=256)
    params = {k: np.zeros(s) for k, s in param_shapes(NET).items()}

    def exact_eps(y_t, t):
        ab = sched.alpha_bar[np.asarray(t) - 1]
        return (y_t - np.sqrt(ab) * y0) / np.sqrt(1 - ab)

    loss, _ = dsm_batch_loss(NET, params, y0, feats, attrs, sched,
                             RandomStream(4), denoiser_fn=exact_eps)
    assert loss == pytest.approx(0.0, abs=1e-24)


def test_dsm_loss_deterministic_replay(sched):
    y0, feats, attrs = _toy_batch(n=64)
    params = init_params(NET, RandomStream(0))
    a, _ = dsm_batch_loss(NET, params, y0, feats, attrs, sched, RandomStream(5))
    b, _ = dsm_batch_loss(NET, params, y0, feats, attrs, sched, RandomStream(5))
    assert a == b


def test_dsm_grad_matches_loss(sched):
    y0, feats, attrs = _toy_batch(n=64)
    params = init_params(NET, RandomStream(0))
    loss_a, _, _ = dsm_batch_grad(NET, params, y0, feats, attrs, sched,
                                  RandomStream(6))
    loss_b, _ = dsm_batch_loss(NET, params, y0, feats, attrs, sched,
                               RandomStream(6))
    assert loss_a == loss_b


def test_empty_batch_raises(sched):
    params = init_params(NET, RandomStream(0))
    with pytest.raises(EmptyDataset):
        dsm_batch_loss(NET, params, [], np.zeros((0, 2)), np.zeros((0, 0)),
                       sched, RandomStream(1))


# --- AdamW ----------------------------------------------------------------------

def _single_param(value):
    return {"p": np.array([value])}


def test_adamw_zero_gradient_no_decay_leaves_params():
    cfg = TrainConfig(learning_rate=0.1, weight_decay=0.0)
    params = _single_param(1.0)
    state = AdamState.zeros_like(params)
    new, _ = adamw_step(params, _single_param(0.0), state, cfg)
    assert new["p"][0] == 1.0


def test_adamw_single_step_hand_evaluated():
    # p=1, g=1, lr=0.1, default betas: mhat=1, vhat=1 -> p' = 1 - 0.1/(1+eps)
    cfg = TrainConfig(learning_rate=0.1, weight_decay=0.0)
    params = _single_param(1.0)
    state = AdamState.zeros_like(params)
    new, state = adamw_step(params, _single_param(1.0), state, cfg)
    expected = 1.0 - 0.1 * 1.0 / (1.0 + cfg.adam_eps)
    assert new["p"][0] == pytest.approx(expected, rel=1e-15)
    assert state.step == 1


def test_adamw_decoupled_decay_shrinks_params():
    cfg = TrainConfig(learning_rate=0.1, weight_decay=0.01)
    params = _single_param(2.0)
    state = AdamState.zeros_like(params)
    new, _ = adamw_step(params, _single_param(0.0), state, cfg)
    assert new["p"][0] == pytest.approx(2.0 * (1 - 0.1 * 0.01), rel=1e-15)


def test_adamw_update_continuous_in_gradient():
    cfg = TrainConfig(learning_rate=0.05, weight_decay=0.0)
    outs = []
    for g in (1.0, 1.0 + 1e-9):
        params = _single_param(1.0)
        state = AdamState.zeros_like(params)
        new, _ = adamw_step(params, _single_param(g), state, cfg)
        outs.append(new["p"][0])
    assert abs(outs[0] - outs[1]) < 1e-9


def test_gradient_clipping():
    grads = {"a": np.array([30.0, 40.0])}  # norm 50
    clipped = clip_gradients(grads, 10.0)
    assert np.allclose(clipped["a"], [6.0, 8.0])
    small = {"a": np.array([3.0, 4.0])}
    assert clip_gradients(small, 10.0) is small


# --- training loops ----------------------------------------------------------------

def test_train_diffusion_loss_decreases(sched):
    y0, feats, attrs = _toy_batch(n=1024)
    cfg = TrainConfig(epochs=30, batch_size=128, seed=7, val_fraction=0.0)
    res = train_diffusion(feats, attrs, y0, NET, cfg, sched)
    sm = smoothed_losses(res.history, window=30)
    assert sm[-1] < sm[0]
    assert res.steps == 30 * 8


def test_train_diffusion_seed_replay_bit_identical(sched):
    y0, feats, attrs = _toy_batch(n=512)
    cfg = TrainConfig(epochs=5, batch_size=128, seed=9, val_fraction=0.0)
    a = train_diffusion(feats, attrs, y0, NET, cfg, sched)
    b = train_diffusion(feats, attrs, y0, NET, cfg, sched)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert [r[1] for r in a.history] == [r[1] for r in b.history]


def test_train_diffusion_single_sample_overfits(sched):
    # one (y0, ctx) pair: eps is a deterministic function of (y_t, t), so a
    # capable net drives the loss near zero
    feats = np.array([[0.3, -0.2]])
    attrs = np.zeros((1, 0))
    y0 = np.array([0.8])
    net = MLPConfig(feature_dim=2, attribute_dim=0, hidden=(64, 64), time_dim=16)
    cfg = TrainConfig(epochs=3000, batch_size=1, learning_rate=3e-3,
                      weight_decay=0.0, seed=10, val_fraction=0.0)
    from genreg.core import TargetNormalizer

    res = train_diffusion(feats, attrs, y0, net, cfg, sched,
                          normalizer=TargetNormalizer.identity())
    sm = smoothed_losses(res.history, window=200)
    assert sm[-1] < 0.15
    assert sm[-1] < sm[0]


def test_train_diffusion_dataset_too_small(sched):
    with pytest.raises(EmptyDataset):
        train_diffusion(np.ones((4, 2)), np.zeros((4, 0)), np.arange(4.0),
                        NET, TrainConfig(batch_size=8), sched)


def test_train_point_regressor_conditional_mean_collapse():
    # symmetric two-mode targets: MSE prediction converges to the mean
    gen = RandomStream(11).generator()
    n = 2048
    feats = gen.uniform(-1, 1, size=(n, 2))
    attrs = np.zeros((n, 0))
    modes = np.where(gen.random(n) < 0.5, -1.0, 1.0)
    y = modes + 0.1 * gen.standard_normal(n)
    net = MLPConfig(feature_dim=2, attribute_dim=0, hidden=(32, 32),
                    time_dim=2, conditional=False)
    cfg = TrainConfig(epochs=60, batch_size=128, seed=12, val_fraction=0.0)
    res = train_point_regressor(feats, attrs, y, net, cfg)
    from genreg.nets import forward

    preds = res.normalizer.denormalize(
        forward(net, res.params, None, None, feats[:200], attrs[:200])
    )
    assert np.all(np.abs(preds) < 0.25)  # within m/4 of the conditional mean


def test_train_point_regressor_constant_target_errors():
    feats = np.ones((64, 2))
    attrs = np.zeros((64, 0))
    from genreg.errors import DegenerateVariance

    net = MLPConfig(feature_dim=2, attribute_dim=0, hidden=(8,), time_dim=2,
                    conditional=False)
    with pytest.raises(DegenerateVariance):
        train_point_regressor(feats, attrs, np.full(64, 3.0), net,
                              TrainConfig(epochs=1, batch_size=32))


def test_train_point_regressor_near_constant_target_converges():
    gen = RandomStream(13).generator()
    feats = gen.uniform(-1, 1, size=(256, 2))
    attrs = np.zeros((256, 0))
    y = 5.0 + 1e-3 * gen.standard_normal(256)
    net = MLPConfig(feature_dim=2, attribute_dim=0, hidden=(16,), time_dim=2,
                    conditional=False)
    cfg = TrainConfig(epochs=40, batch_size=64, seed=14, val_fraction=0.0)
    res = train_point_regressor(feats, attrs, y, net, cfg)
    from genreg.nets import forward

    preds = res.normalizer.denormalize(
        forward(net, res.params, None, None, feats[:32], attrs[:32]))
    assert np.allclose(preds, 5.0, atol=0.05)


def test_train_point_seed_replay(sched):
    y0, feats, attrs = _toy_batch(n=512)
    net = MLPConfig(feature_dim=2, attribute_dim=0, hidden=(16,), time_dim=2,
                    conditional=False)
    cfg = TrainConfig(epochs=5, batch_size=128, seed=15, val_fraction=0.0)
    a = train_point_regressor(feats, attrs, y0, net, cfg)
    b = train_point_regressor(feats, attrs, y0, net, cfg)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_diverged_training_detected(sched):
    # lr * wd = 10 makes every parameter grow ninefold per step, an
    # unambiguous geometric explosion
    y0, feats, attrs = _toy_batch(n=256)
    cfg = TrainConfig(epochs=200, batch_size=64, learning_rate=0.1,
                      weight_decay=100.0, grad_clip=None, seed=16,
                      val_fraction=0.0)
    with pytest.raises(DivergedTraining):
        with np.errstate(over="ignore", invalid="ignore"):
            train_diffusion(feats, attrs, y0, NET, cfg, sched)


def test_validation_history_and_early_stop(sched):
    y0, feats, attrs = _toy_batch(n=1024)
    cfg = TrainConfig(epochs=20, batch_size=128, seed=17, val_fraction=0.2,
                      val_every=2, val_samples=8, early_stop_patience=2)
    res = train_diffusion(feats, attrs, y0, NET, cfg, sched)
    vals = [row[2] for row in res.history if row[2] is not None]
    assert len(vals) >= 2
    assert res.best_val == pytest.approx(min(vals))


def test_train_config_validation():
    with pytest.raises(InvalidRange):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(InvalidRange):
        TrainConfig(batch_size=0)
    with pytest.raises(InvalidRange):
        TrainConfig(val_fraction=1.0)


def test_mse_batch_grad_zero_at_perfect_fit():
    net = MLPConfig(feature_dim=1, attribute_dim=0, hidden=(4,), time_dim=2,
                    conditional=False)
    params = {k: np.zeros(s) for k, s in param_shapes(net).items()}
    feats = np.array([[0.5], [-0.5]])
    loss, grads = mse_batch_grad(net, params, np.zeros(2), feats,
                                 np.zeros((2, 0)))
    assert loss == 0.0
    assert all(np.allclose(g, 0) for g in grads.values())

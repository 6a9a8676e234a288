import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from genreg import DiffusionRegressor, PointRegressor

from genreg.synthetic import generate, make_task


def _task_xy(name="A", n=1024, seed=0):
    data = generate(make_task(name), n, seed=seed)
    X = np.hstack([data.features, data.attributes])
    return X, data.y, data


FAST = dict(epochs=25, batch_size=128, d_model=16, n_heads=2, head_hidden=(32,),
            time_dim=8, val_fraction=0.0, n_samples=16, random_state=0)


@pytest.fixture(scope="module")
def fitted():
    X, y, _ = _task_xy()
    kw = dict(FAST)
    kw["epochs"] = 300  # ~2400 steps: enough for a usable toy model
    return DiffusionRegressor(**kw).fit(X, y), X, y


def test_get_set_params_and_clone():
    est = DiffusionRegressor(n_steps=7, random_state=3)
    params = est.get_params()
    assert params["n_steps"] == 7
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(n_steps=9)
    assert est.get_params()["n_steps"] == 9


def test_not_fitted_error():
    with pytest.raises(NotFittedError):
        DiffusionRegressor().predict(np.ones((2, 2)))
    with pytest.raises(NotFittedError):
        PointRegressor().predict(np.ones((2, 2)))


def test_fit_predict_shapes_and_determinism(fitted):
    est, X, y = fitted
    preds = est.predict(X[:16])
    again = est.predict(X[:16])
    assert preds.shape == (16,)
    assert np.array_equal(preds, again)
    draws = est.sample(X[:4], n_samples=8)
    assert draws.shape == (4, 8)
    stds = est.predict_std(X[:4])
    assert stds.shape == (4,)
    assert np.all(stds >= 0)


def test_predictions_track_the_conditional_mean(fitted):
    est, X, y = fitted
    data = generate(make_task("A"), 64, seed=5)
    Xe = data.features
    true_mean = 1.3 * Xe[:, 0] + 0.65 * Xe[:, 1]
    preds = est.predict(Xe)
    assert np.mean(np.abs(preds - true_mean)) < 0.25


def test_score_is_r2(fitted):
    est, X, y = fitted
    r2 = est.score(X[:256], y[:256])
    assert r2 > 0.3


def test_clip_bounds_respected():
    X, y, _ = _task_xy(n=512, seed=2)
    kw = dict(FAST)
    kw["epochs"] = 5
    est = DiffusionRegressor(clip_bounds=(-0.1, 0.1), **kw).fit(X, y)
    preds = est.predict(X[:8])
    assert np.all(preds >= -0.1) and np.all(preds <= 0.1)


def test_attribute_columns_split():
    X, y, data = _task_xy("D", n=1024, seed=3)
    kw = dict(FAST)
    kw.update(epochs=40, attr_hidden=(16,))
    est = DiffusionRegressor(n_attributes=1, **kw).fit(X, y)
    assert est.net_config_.attribute_dim == 1
    assert est.net_config_.feature_dim == 2
    preds_pos = est.predict(np.array([[0.0, 0.0, 1.0]]))
    preds_neg = est.predict(np.array([[0.0, 0.0, -1.0]]))
    assert preds_pos[0] > preds_neg[0]  # attribute steers the posterior


def test_point_regressor_fits_mean():
    X, y, _ = _task_xy("A", n=1024, seed=4)
    est = PointRegressor(epochs=40, batch_size=128, d_model=16, n_heads=2,
                         head_hidden=(32,), val_fraction=0.0,
                         random_state=1).fit(X, y)
    data = generate(make_task("A"), 64, seed=6)
    true_mean = 1.3 * data.features[:, 0] + 0.65 * data.features[:, 1]
    preds = est.predict(data.features)
    assert np.mean(np.abs(preds - true_mean)) < 0.2


def test_mlp_architecture_variant():
    X, y, _ = _task_xy(n=512, seed=7)
    est = DiffusionRegressor(architecture="mlp", hidden=(32, 32), epochs=10,
                             batch_size=128, val_fraction=0.0, n_samples=8,
                             random_state=0).fit(X, y)
    assert est.predict(X[:3]).shape == (3,)


def test_sklearn_pipeline_compatibility():
    from sklearn.pipeline import Pipeline
    from sklearn.preprocessing import StandardScaler

    X, y, _ = _task_xy(n=512, seed=8)
    kw = dict(FAST)
    kw["epochs"] = 5
    pipe = Pipeline([("scale", StandardScaler()),
                     ("model", DiffusionRegressor(**kw))])
    pipe.fit(X, y)
    assert pipe.predict(X[:5]).shape == (5,)

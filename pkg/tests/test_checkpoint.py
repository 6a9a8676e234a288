import json

import numpy as np
import pytest

from genreg.checkpoint import load_checkpoint, save_checkpoint
from genreg.core import TargetNormalizer
from genreg.errors import CheckpointCorrupt
from genreg.nets import CrossAttentionConfig, MLPConfig, forward, init_params
from genreg.rng import RandomStream
from genreg.schedule import linear_schedule

from conftest import randomized_params


NET = CrossAttentionConfig(feature_dim=2, attribute_dim=1, d_model=8,
                           n_heads=2, attr_hidden=(4,), head_hidden=(8,),
                           time_dim=4)


def _save(tmp_path, net=NET, params=None, meta=None):
    params = params or randomized_params(net, seed=1)
    path = tmp_path / "ck.json"
    save_checkpoint(path, net, params, TargetNormalizer(center=3.0, scale=2.0),
                    linear_schedule(100, 1e-4, 0.02), meta or {"note": "x"})
    return path, params


def test_round_trip_preserves_everything(tmp_path):
    path, params = _save(tmp_path)
    ck = load_checkpoint(path)
    assert ck.net_config == NET
    assert ck.normalizer == TargetNormalizer(center=3.0, scale=2.0)
    assert ck.schedule.T == 100
    assert ck.meta["note"] == "x"
    for k in params:
        assert np.array_equal(ck.params[k], params[k])


def test_loaded_params_reproduce_forward_exactly(tmp_path):
    path, params = _save(tmp_path)
    ck = load_checkpoint(path)
    y = np.array([0.3, -0.8])
    t = np.array([5, 90])
    feats = np.array([[0.1, 0.2], [0.4, -0.5]])
    attrs = np.array([[1.0], [0.0]])
    a = forward(NET, params, y, t, feats, attrs)
    b = forward(ck.net_config, ck.params, y, t, feats, attrs)
    assert np.array_equal(a, b)


def test_save_is_byte_deterministic(tmp_path):
    p1, _ = _save(tmp_path / "a" if (tmp_path / "a").mkdir() or True else None)
    p2, _ = _save(tmp_path / "b" if (tmp_path / "b").mkdir() or True else None)
    assert p1.read_bytes() == p2.read_bytes()


def test_rejects_garbage_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("not json at all {")
    with pytest.raises(CheckpointCorrupt):
        load_checkpoint(path)


def test_rejects_tampered_config(tmp_path):
    path, _ = _save(tmp_path)
    doc = json.loads(path.read_text())
    doc["config"]["d_model"] = 16  # hash no longer matches
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointCorrupt):
        load_checkpoint(path)


def test_rejects_missing_parameters(tmp_path):
    path, _ = _save(tmp_path)
    doc = json.loads(path.read_text())
    doc["params"].popitem()
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointCorrupt):
        load_checkpoint(path)


def test_rejects_wrong_schema_version(tmp_path):
    path, _ = _save(tmp_path)
    doc = json.loads(path.read_text())
    doc["schema_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointCorrupt):
        load_checkpoint(path)


def test_mlp_checkpoint_round_trip(tmp_path):
    net = MLPConfig(feature_dim=3, attribute_dim=0, hidden=(8,), time_dim=4)
    params = init_params(net, RandomStream(2))
    path = tmp_path / "mlp.json"
    save_checkpoint(path, net, params, TargetNormalizer.identity(), None, {})
    ck = load_checkpoint(path)
    assert ck.net_config == net
    assert ck.schedule is None

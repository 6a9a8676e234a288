import numpy as np
import pytest

from genreg.nets import flatten_params, forward, forward_cached, backward, unflatten_params
from genreg.rng import RandomStream


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


def randomized_params(config, seed=0, scale=0.5):
    """Init params with every layer (incl. the zero-init head) randomized."""
    from genreg.nets import init_params

    params = init_params(config, RandomStream(seed))
    gen = RandomStream(seed, 99).generator()
    return {k: gen.standard_normal(p.shape) * scale for k, p in params.items()}


def finite_difference_max_rel_err(config, params, y, t, feats, attrs, target,
                                  h=1e-5):
    """Max relative error of analytic grads vs central finite differences."""

    def loss_at(p):
        args = (y, t) if config.conditional else (None, None)
        out = forward(config, p, *args, feats, attrs)
        return float(np.mean((out - target) ** 2))

    args = (y, t) if config.conditional else (None, None)
    out, cache = forward_cached(config, params, *args, feats, attrs)
    grads = backward(config, params, cache, 2.0 * (out - target) / out.size)
    flat = flatten_params(params)
    gflat = flatten_params(grads)
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        up = flat.copy()
        up[i] += h
        dn = flat.copy()
        dn[i] -= h
        fd[i] = (loss_at(unflatten_params(up, params))
                 - loss_at(unflatten_params(dn, params))) / (2 * h)
    rel = np.abs(gflat - fd) / (np.abs(fd) + 1e-8)
    return float(rel.max())


def gradcheck_inputs(config, seed=0, batch=4):
    gen = RandomStream(seed, 7).generator()
    y = gen.standard_normal(batch)
    t = gen.integers(1, 1001, size=batch)
    feats = gen.standard_normal((batch, config.feature_dim))
    attrs = gen.standard_normal((batch, config.attribute_dim))
    target = gen.standard_normal(batch)
    return y, t, feats, attrs, target

import math

import numpy as np
import pytest

from wfriction.core import NumericError, Prng
from wfriction.nn import Gradients, backward, forward, mlp_specs, softmax_cross_entropy, xavier_init
from wfriction.optim import (
    ADAM,
    GAUSSIAN_BELL,
    IDENTITY,
    LOGISTIC_BELL,
    SGD,
    WEIGHT_FRICTION,
    AdamState,
    FrictionFunction,
    Optimizer,
    OptimizerConfig,
    adam_step,
    apply_mu_schedule,
    friction_factor,
    sgd_step,
    wf_step,
)


def exp_form(mu, w):
    # reference written straight from the exponential definition
    e = math.exp(mu * w)
    return 4 * e / (1 + e) ** 2


def grads_for(model, seed=0, n=8):
    r = Prng(seed)
    x = r.random((n, model.layers[0].in_dim))
    y = np.arange(n) % model.layers[-1].out_dim
    logits, cache = forward(model, x)
    _, d = softmax_cross_entropy(logits, y)
    return backward(model, cache, d)


@pytest.mark.parametrize("kind", [LOGISTIC_BELL, GAUSSIAN_BELL])
def test_g_at_zero_is_one(kind):
    for mu in (0.0, 0.5, 1.0, 50.0):
        assert friction_factor(FrictionFunction(kind, mu), 0.0) == 1.0


def test_logistic_matches_exponential_form():
    f = FrictionFunction(LOGISTIC_BELL, 1.0)
    assert f(2.0) == pytest.approx(0.419974, abs=1e-6)
    for mu, w in [(1, 2), (0.5, -3), (3, 0.1), (20, 0.2), (2, -7)]:
        assert friction_factor(FrictionFunction(LOGISTIC_BELL, mu), w) == pytest.approx(exp_form(mu, w), rel=1e-13)


def test_gaussian_values():
    f = FrictionFunction(GAUSSIAN_BELL, 2.0)
    assert f(1.5) == pytest.approx(math.exp(-4.5), rel=1e-15)


@pytest.mark.parametrize("kind", [LOGISTIC_BELL, GAUSSIAN_BELL])
def test_even_monotone_bounded_finite(kind):
    f = FrictionFunction(kind, 3.0)
    w = np.linspace(0, 10, 2001)
    g = f(w)
    np.testing.assert_array_equal(g, f(-w))
    assert np.all(np.diff(g) <= 0)
    assert np.all((g > 0) & (g <= 1))
    big = friction_factor(FrictionFunction(kind, 1.0), np.array([1e6, -1e6, 1e300]))
    assert np.all(np.isfinite(big)) and np.all(big > 0)


def test_identity_and_mu_zero_are_one():
    w = np.array([-5.0, 0.0, 3.0])
    np.testing.assert_array_equal(FrictionFunction(IDENTITY, 7.0)(w), 1.0)
    np.testing.assert_array_equal(FrictionFunction(LOGISTIC_BELL, 0.0)(w), 1.0)


def test_friction_rejects_bad_input():
    with pytest.raises(ValueError):
        FrictionFunction("tent", 1.0)
    with pytest.raises(ValueError):
        FrictionFunction(LOGISTIC_BELL, -1.0)
    with pytest.raises(ValueError):
        FrictionFunction(LOGISTIC_BELL, 1.0)(np.array([np.nan]))


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(SGD, 0.0)
    with pytest.raises(ValueError):
        OptimizerConfig(WEIGHT_FRICTION, 0.1)
    with pytest.raises(ValueError):
        OptimizerConfig(SGD, 0.1, friction=FrictionFunction())
    with pytest.raises(ValueError):
        OptimizerConfig(SGD, 0.1, mu_schedule=(1.0,))
    with pytest.raises(ValueError):
        OptimizerConfig("rmsprop", 0.1)


@pytest.mark.parametrize("kind", [LOGISTIC_BELL, GAUSSIAN_BELL])
def test_wf_step_matches_definition(small_model, kind):
    f = FrictionFunction(kind, 4.0)
    cfg = OptimizerConfig(WEIGHT_FRICTION, 0.3, friction=f)
    g = grads_for(small_model)
    new = wf_step(small_model, g, cfg)
    for k, (p, q, d) in enumerate(zip(small_model.params(), new.params(), g.params())):
        scale = 1.0 if k % 2 else friction_factor(f, p)
        np.testing.assert_allclose(q, p - 0.3 * scale * d, rtol=0, atol=1e-15)
    cfg_b = OptimizerConfig(WEIGHT_FRICTION, 0.3, friction=f, apply_friction_to_biases=True)
    nb = wf_step(small_model, g, cfg_b)
    np.testing.assert_allclose(nb.biases[0], small_model.biases[0] - 0.3 * f(small_model.biases[0]) * g.biases[0], atol=1e-15)


def test_wf_huge_weights_do_not_move(small_model):
    w = [p.copy() for p in small_model.weights]
    w[0][0, 0] = 1e6
    m = small_model.with_params(w, small_model.biases)
    cfg = OptimizerConfig(WEIGHT_FRICTION, 0.5, friction=FrictionFunction(LOGISTIC_BELL, 10.0))
    new = wf_step(m, grads_for(m), cfg)
    assert new.weights[0][0, 0] == 1e6


def test_mu_zero_is_bit_identical_to_sgd():
    model = xavier_init(mlp_specs(6, [8], 3), Prng(9))
    a = b = model
    sgd = OptimizerConfig(SGD, 0.05)
    wf = OptimizerConfig(WEIGHT_FRICTION, 0.05, friction=FrictionFunction(LOGISTIC_BELL, 0.0))
    for t in range(50):
        a = sgd_step(a, grads_for(a, t), sgd)
        b = wf_step(b, grads_for(b, t), wf)
    for p, q in zip(a.params(), b.params()):
        assert np.array_equal(p, q)


def test_sgd_step_and_nonfinite_gradient(small_model):
    g = grads_for(small_model)
    new = sgd_step(small_model, g, OptimizerConfig(SGD, 0.1))
    np.testing.assert_array_equal(new.weights[1], small_model.weights[1] - 0.1 * g.weights[1])
    bad = Gradients([w.copy() for w in g.weights], [b.copy() for b in g.biases])
    bad.weights[0][0, 0] = np.nan
    with pytest.raises(NumericError):
        sgd_step(small_model, bad, OptimizerConfig(SGD, 0.1))


def test_adam_first_step_is_sign_times_lr(small_model):
    # after one step the bias-corrected ratio m/sqrt(v) is sign(g) up to eps
    g = grads_for(small_model)
    cfg = OptimizerConfig(ADAM, 0.001)
    new, st = adam_step(small_model, g, AdamState.zeros_like(small_model), cfg)
    assert st.t == 1
    for p, q, d in zip(small_model.params(), new.params(), g.params()):
        expect = p - 0.001 * d / (np.abs(d) + 1e-8)
        np.testing.assert_allclose(q, expect, rtol=0, atol=1e-15)


def test_adam_matches_explicit_recurrence(small_model):
    cfg = OptimizerConfig(ADAM, 0.01)
    opt = Optimizer(cfg)
    opt.start_epoch(0)
    model = small_model
    ref = [p.copy() for p in small_model.params()]
    m = [np.zeros_like(p) for p in ref]
    v = [np.zeros_like(p) for p in ref]
    for t in range(1, 6):
        g = grads_for(model, t)
        for i, d in enumerate(g.params()):
            m[i] = 0.9 * m[i] + 0.1 * d
            v[i] = 0.999 * v[i] + 0.001 * d * d
            ref[i] = ref[i] - 0.01 * (m[i] / (1 - 0.9**t)) / (np.sqrt(v[i] / (1 - 0.999**t)) + 1e-8)
        model = opt.step(model, g)
    for p, r in zip(model.params(), ref):
        np.testing.assert_allclose(p, r, rtol=1e-12, atol=1e-15)
    assert opt.state_slots(model) == 2 * model.n_params


def test_mu_schedule():
    f = FrictionFunction(LOGISTIC_BELL, 2.0)
    cfg = OptimizerConfig(WEIGHT_FRICTION, 0.1, friction=f, mu_schedule=(0.0, 0.5, 1.0))
    assert [apply_mu_schedule(cfg, e).mu for e in range(5)] == [0.0, 1.0, 2.0, 2.0, 2.0]
    opt = Optimizer(cfg)
    assert opt.start_epoch(1) == 1.0
    assert opt.state_slots(None) == 0
    assert apply_mu_schedule(OptimizerConfig(SGD, 0.1), 3) is None

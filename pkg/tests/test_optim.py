import numpy as np
import pytest

from maskconver.training.optim import AdamWState, adamw_step, ema_update, ema_warmup_decay


def _step(p, g, **kw):
    params = {"w": np.array([p])}
    state = AdamWState.zeros_like(params)
    adamw_step(params, {"w": np.array([g])}, state, **kw)
    return params["w"][0], state


def test_first_step_moves_by_lr():
    w, state = _step(1.0, 1.0, lr=1e-3, weight_decay=0.0)
    assert w == pytest.approx(0.999, abs=1e-9)
    assert state.step == 1


def test_decoupled_decay_with_zero_gradient():
    w, _ = _step(1.0, 0.0, lr=1e-3, weight_decay=0.05)
    assert w == pytest.approx(0.99995, abs=1e-12)


def test_zero_gradient_zero_decay_is_identity():
    w, _ = _step(0.37, 0.0, lr=1e-3, weight_decay=0.0)
    assert w == 0.37


def test_two_steps_match_hand_computation():
    lr, b1, b2, eps, wd = 0.1, 0.9, 0.999, 1e-8, 0.01
    params = {"w": np.array([2.0])}
    state = AdamWState.zeros_like(params)
    w, m, v = 2.0, 0.0, 0.0
    for t, g in enumerate([0.5, -1.5], start=1):
        adamw_step(params, {"w": np.array([g])}, state, lr, b1, b2, eps, wd)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w * (1 - lr * wd) - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    assert params["w"][0] == pytest.approx(w, rel=1e-12)


def test_ema_examples():
    s = {"w": np.array([1.0])}
    ema_update(s, {"w": np.array([3.0])}, decay=0.0)
    assert s["w"][0] == 3.0
    ema_update(s, {"w": np.array([7.0])}, decay=1.0)
    assert s["w"][0] == 3.0
    ema_update(s, {"w": np.array([5.0])}, decay=0.5)
    assert s["w"][0] == 4.0


def test_ema_shape_mismatch():
    with pytest.raises(ValueError):
        ema_update({"w": np.zeros(2)}, {"w": np.zeros(3)}, 0.5)


def test_ema_warmup_decay():
    assert ema_warmup_decay(0.99996, 0) == pytest.approx(0.1)
    assert ema_warmup_decay(0.99996, 10 ** 7) == 0.99996
    vals = [ema_warmup_decay(0.99996, t) for t in range(0, 5000, 100)]
    assert vals == sorted(vals)

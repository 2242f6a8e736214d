import numpy as np
import pytest

from naturalritz import optim as op


def test_adam_zero_gradient_noop():
    state = op.AdamState.init(3)
    params = np.array([1.0, -2.0, 0.5])
    out = op.adam_step(state, params, np.zeros(3), lr=0.01)
    assert np.array_equal(out, params)


def test_adam_first_step_closed_form():
    state = op.AdamState.init(2)
    g = np.array([0.5, -2.0])
    out = op.adam_step(state, np.zeros(2), g, lr=0.005)
    expected = -0.005 * g / (np.abs(g) + 1e-8)
    assert np.allclose(out, expected, atol=1e-12)


def test_adam_deterministic_trajectories():
    def run():
        state = op.AdamState.init(2)
        params = np.array([1.0, 1.0])
        rng = np.random.default_rng(0)
        for _ in range(50):
            g = rng.standard_normal(2)
            params = op.adam_step(state, params, g, lr=0.01)
        return params

    assert np.array_equal(run(), run())


def test_adam_rejects_nonfinite():
    state = op.AdamState.init(2)
    with pytest.raises(op.NonFiniteGradientError):
        op.adam_step(state, np.zeros(2), np.array([1.0, np.nan]), lr=0.01)


def test_cosine_schedule_endpoints():
    assert op.cosine_lr(0, 100, 0.005) == 0.005
    assert abs(op.cosine_lr(100, 100, 0.005)) <= 1e-18
    assert np.isclose(op.cosine_lr(50, 100, 0.005), 0.0025)
    assert np.isclose(op.cosine_lr(50, 100, 0.005, eta_min=0.001), 0.003)
    with pytest.raises(ValueError):
        op.cosine_lr(101, 100, 0.005)


def test_lbfgs_convex_quadratic():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((10, 10))
    A = A @ A.T + 10 * np.eye(10)
    b = rng.standard_normal(10)

    def obj(th):
        return 0.5 * th @ A @ th - b @ th, A @ th - b

    th = op.lbfgs_run(obj, np.zeros(10), outer_steps=1, inner_iters=30, history=10)
    assert np.max(np.abs(A @ th - b)) <= 1e-8


def test_lbfgs_rosenbrock():
    def obj(th):
        x, y = th
        f = (1 - x) ** 2 + 100 * (y - x * x) ** 2
        g = np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
        return f, g

    th = op.lbfgs_run(obj, np.array([-1.2, 1.0]), outer_steps=1, inner_iters=200, history=20)
    assert obj(th)[0] <= 1e-6


def test_lbfgs_zero_gradient_fixed_point():
    def obj(th):
        return 1.0, np.zeros_like(th)

    start = np.array([1.0, 2.0, 3.0])
    th = op.lbfgs_run(obj, start, outer_steps=2, inner_iters=5)
    assert np.array_equal(th, start)


def test_lbfgs_monotone():
    values = []

    def obj(th):
        x, y = th
        f = (1 - x) ** 2 + 100 * (y - x * x) ** 2
        g = np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
        return f, g

    def cb(outer, params, f):
        values.append(f)

    op.lbfgs_run(obj, np.array([-1.2, 1.0]), outer_steps=10, inner_iters=10, on_outer_step=cb)
    assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))


def test_history_cap_and_curvature_filter():
    state = op.LbfgsState(history=3)
    rng = np.random.default_rng(1)
    for _ in range(10):
        s = rng.standard_normal(4)
        y = s + 0.1 * rng.standard_normal(4)  # positive curvature
        state.push(s, y)
    assert len(state.s_list) == 3
    assert not state.push(np.ones(4), -np.ones(4))  # negative curvature discarded
    assert len(state.s_list) == 3

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatedrnn.cells import (GruVariant, LstmState, cell_backstep, count_params, gru_step,
                            init_params, lstm_step, param_budget_to_units, param_shapes,
                            tanh_step)
from gatedrnn.exceptions import ParameterError, ShapeError
from gatedrnn.gradcheck import finite_diff
from gatedrnn.numerics import RngStream


def zeros(kind, n, d):
    return {k: np.zeros(s) for k, s in param_shapes(kind, n, d).items()}


def test_init_reproducible_and_forget_bias():
    a = init_params("lstm", 4, 3, RngStream(2))
    b = init_params("lstm", 4, 3, RngStream(2))
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    np.testing.assert_array_equal(a["b_f"], 1.0)
    for k in ("b_i", "b_o", "b_c"):
        np.testing.assert_array_equal(a[k], 0.0)


def test_init_weight_spread():
    d = 25
    p = init_params("tanh", 4000, d, RngStream(0), scale=1.0)
    w = p["W"].ravel()
    assert w.size == 10**5
    expected = (1 / math.sqrt(d)) / math.sqrt(3)
    assert abs(w.std() / expected - 1) < 0.01
    assert np.abs(w).max() <= 1 / math.sqrt(d)


def test_tanh_step_examples():
    h, _ = tanh_step(zeros("tanh", 3, 2), np.ones(3) * 0.3, np.array([5.0, -2.0]))
    np.testing.assert_array_equal(h, 0)
    p = {"W": np.ones((1, 1)), "U": np.ones((1, 1)), "b": np.zeros(1)}
    h, _ = tanh_step(p, np.zeros(1), np.array([0.5]))
    assert h[0] == pytest.approx(math.tanh(0.5), abs=1e-15)
    assert h[0] == pytest.approx(0.462117, abs=1e-6)


@settings(max_examples=30)
@given(st.integers(0, 10**6))
def test_tanh_range(seed):
    rng = np.random.default_rng(seed)
    p = {k: rng.normal(size=s) * 5 for k, s in param_shapes("tanh", 4, 3).items()}
    h, _ = tanh_step(p, rng.uniform(-1, 1, 4), rng.normal(size=3) * 10)
    assert np.all(np.abs(h) <= 1)


def test_lstm_step_examples():
    s, _ = lstm_step(zeros("lstm", 2, 3), LstmState(np.zeros(2), np.zeros(2)), np.ones(3))
    np.testing.assert_array_equal(s.c, 0)
    np.testing.assert_array_equal(s.h, 0)
    s, _ = lstm_step(zeros("lstm", 1, 1), LstmState(np.zeros(1), np.ones(1)), np.zeros(1))
    assert s.c[0] == pytest.approx(0.5, abs=1e-15)
    assert s.h[0] == pytest.approx(0.5 * math.tanh(0.5), abs=1e-15)
    assert s.h[0] == pytest.approx(0.231059, abs=1e-6)


def test_lstm_perfect_carry():
    n, d = 5, 3
    p = zeros("lstm", n, d)
    p["b_f"][:] = 30.0
    p["b_i"][:] = -30.0
    rng = np.random.default_rng(1)
    state = LstmState(rng.uniform(-1, 1, n), rng.normal(size=n))
    for _ in range(10):
        new, _ = lstm_step(p, state, rng.normal(size=d))
        assert np.max(np.abs(new.c - state.c)) < 1e-9
        state = new


def test_gru_step_examples():
    h, _ = gru_step(zeros("gru", 2, 1), np.array([1.0, -2.0]), np.zeros(1))
    np.testing.assert_allclose(h, [0.5, -1.0], atol=1e-15)
    p = zeros("gru", 4, 2)
    p["b_z"][:] = -30.0
    h_prev = np.array([0.3, -0.7, 0.9, 0.1])
    for variant in GruVariant:
        h, _ = gru_step(p, h_prev, np.array([3.0, -1.0]), variant)
        assert np.max(np.abs(h - h_prev)) < 1e-9


def test_gru_variants_agree_for_diagonal_u():
    rng = np.random.default_rng(3)
    p = {k: rng.normal(size=s) for k, s in param_shapes("gru", 4, 3).items()}
    p["U"] = np.diag(rng.normal(size=4))
    h_prev, x = rng.uniform(-1, 1, 4), rng.normal(size=3)
    a, _ = gru_step(p, h_prev, x, "candidate")
    b, _ = gru_step(p, h_prev, x, "projection")
    np.testing.assert_allclose(a, b, rtol=1e-14)
    p["U"] = rng.normal(size=(4, 4))
    a, _ = gru_step(p, h_prev, x, "candidate")
    b, _ = gru_step(p, h_prev, x, "projection")
    assert not np.allclose(a, b)


def test_step_shape_errors():
    with pytest.raises(ShapeError):
        tanh_step(zeros("tanh", 3, 2), np.zeros(4), np.zeros(2))
    with pytest.raises(ShapeError):
        gru_step(zeros("gru", 3, 2), np.zeros(3), np.zeros(5))


def _run_step(kind, p, state, x):
    if kind == "tanh":
        return tanh_step(p, state, x)
    if kind == "lstm":
        return lstm_step(p, state, x)
    return gru_step(p, state, x)


@pytest.mark.parametrize("kind", ["tanh", "lstm", "gru"])
def test_backstep_zero_upstream(kind):
    rng = np.random.default_rng(0)
    p = {k: rng.normal(size=s) for k, s in param_shapes(kind, 3, 2).items()}
    state = LstmState(np.ones(3) * 0.2, np.ones(3)) if kind == "lstm" else np.ones(3) * 0.2
    _, trace = _run_step(kind, p, state, np.array([0.5, -1.0]))
    back = cell_backstep(kind, p, trace, np.zeros(3), np.zeros(3) if kind == "lstm" else None)
    for g in back.grads.values():
        np.testing.assert_array_equal(g, 0)
    np.testing.assert_array_equal(back.grad_h_prev, 0)


def test_single_tanh_step_matches_finite_differences():
    rng = np.random.default_rng(4)
    p = {k: rng.normal(size=s) for k, s in param_shapes("tanh", 1, 1).items()}
    h_prev, x = np.array([0.3]), np.array([-0.8])
    _, trace = tanh_step(p, h_prev, x)
    back = cell_backstep("tanh", p, trace, np.ones(1))
    numeric = finite_diff(lambda q: float(tanh_step(q, h_prev, x)[0].sum()),
                          {k: v.copy() for k, v in p.items()})
    for k in p:
        np.testing.assert_allclose(back.grads[k], numeric[k], rtol=1e-7)


@pytest.mark.parametrize("kind", ["lstm", "gru"])
@pytest.mark.parametrize("variant", ["candidate", "projection"])
def test_backstep_input_and_state_gradients(kind, variant):
    rng = np.random.default_rng(11)
    n, d = 3, 2
    p = {k: rng.normal(size=s) for k, s in param_shapes(kind, n, d).items()}
    h0, c0, x = rng.uniform(-1, 1, n), rng.normal(size=n), rng.normal(size=d)
    gh = rng.normal(size=n)

    def loss(h, c, xx):
        if kind == "lstm":
            s, _ = lstm_step(p, LstmState(h, c), xx)
            return float(gh @ s.h)
        return float(gh @ gru_step(p, h, xx, variant)[0])

    if kind == "lstm":
        _, trace = lstm_step(p, LstmState(h0, c0), x)
        back = cell_backstep(kind, p, trace, gh, np.zeros(n))
    else:
        _, trace = gru_step(p, h0, x, variant)
        back = cell_backstep(kind, p, trace, gh)
    np.testing.assert_allclose(back.grad_h_prev,
                               finite_diff(lambda h: loss(h, c0, x), h0.copy()), rtol=1e-6)
    np.testing.assert_allclose(back.grad_x,
                               finite_diff(lambda xx: loss(h0, c0, xx), x.copy()), rtol=1e-6)
    if kind == "lstm":
        np.testing.assert_allclose(back.grad_c_prev,
                                   finite_diff(lambda c: loss(h0, c, x), c0.copy()), rtol=1e-6)


def test_lstm_saturated_forget_carries_gradient():
    n, d = 4, 2
    p = zeros("lstm", n, d)
    p["b_f"][:] = 30.0
    p["b_i"][:] = -30.0
    rng = np.random.default_rng(5)
    _, trace = lstm_step(p, LstmState(rng.uniform(-1, 1, n), rng.normal(size=n)),
                         rng.normal(size=d))
    gc = rng.normal(size=n)
    back = cell_backstep("lstm", p, trace, np.zeros(n), gc)
    np.testing.assert_allclose(back.grad_c_prev, gc, atol=1e-9)


def test_count_params_table():
    assert count_params("lstm", 195, 20) == 169065
    assert count_params("gru", 227, 20) == 168888
    assert count_params("tanh", 400, 20) == 168400
    assert count_params("tanh", 1, 1) == 3


@pytest.mark.parametrize("kind", ["tanh", "lstm", "gru"])
def test_count_params_matches_shapes(kind):
    total = sum(int(np.prod(s)) for s in param_shapes(kind, 7, 5).values())
    assert count_params(kind, 7, 5) == total


def test_budget_matcher_table():
    assert param_budget_to_units("lstm", 20, 169100) == 195
    assert param_budget_to_units("gru", 20, 168900) == 227
    assert param_budget_to_units("tanh", 20, 168400) == 400
    assert count_params("lstm", 196, 20) > 169100
    assert count_params("gru", 228, 20) > 168900
    with pytest.raises(ParameterError):
        param_budget_to_units("lstm", 20, 10)


@settings(max_examples=50)
@given(st.sampled_from(["tanh", "lstm", "gru"]), st.integers(1, 60), st.integers(10, 10**6))
def test_budget_matcher_is_maximal(kind, d, budget):
    try:
        n = param_budget_to_units(kind, d, budget)
    except ParameterError:
        assert count_params(kind, 1, d) > budget
        return
    assert count_params(kind, n, d) <= budget < count_params(kind, n + 1, d)

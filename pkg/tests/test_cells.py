import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowgnn import cells, numcore as nc
from flowgnn.cells import CellKind, CellState, cell_step, init_params, param_count
from flowgnn.errors import ShapeError
from flowgnn.numcore import Tensor


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def straight_line_rnn(params, h, x):
    hx = np.concatenate([h, x])
    return np.tanh(params.weights["W_h"].values @ hx + params.biases["b_h"].values)


def straight_line_gru(params, h, x):
    hx = np.concatenate([h, x])
    z = _sigmoid(params.weights["W_z"].values @ hx + params.biases["b_z"].values)
    r = _sigmoid(params.weights["W_r"].values @ hx + params.biases["b_r"].values)
    cand = np.tanh(params.weights["W"].values @ np.concatenate([r * h, x]) + params.biases["b"].values)
    return (1.0 - z) * h + z * cand


def straight_line_lstm(params, h, c, x):
    hx = np.concatenate([h, x])
    f = _sigmoid(params.weights["W_f"].values @ hx + params.biases["b_f"].values)
    i = _sigmoid(params.weights["W_i"].values @ hx + params.biases["b_i"].values)
    o = _sigmoid(params.weights["W_o"].values @ hx + params.biases["b_o"].values)
    cand = np.tanh(params.weights["W_c"].values @ hx + params.biases["b_c"].values)
    c_new = f * c + i * cand
    return o * np.tanh(c_new), c_new


def _state(kind, h_values, c_values=None):
    c = Tensor(c_values) if c_values is not None else None
    if CellKind(kind) is CellKind.LSTM and c is None:
        c = Tensor(np.zeros_like(h_values))
    return CellState(h=Tensor(h_values), c=c)


def test_rnn_all_zero_params_gives_zero_hidden():
    params = init_params(CellKind.RNN, 3, 4, seed=0)
    for t in params.parameters():
        t.values[:] = 0.0
    out = cell_step(CellKind.RNN, params, _state("rnn", np.array([0.3, -0.2, 0.9, 0.1])), Tensor([1.0, 2.0, 3.0]))
    assert np.array_equal(out.h.values, np.zeros(4))


def test_gru_closed_update_gate_keeps_previous_hidden():
    params = init_params(CellKind.GRU, 3, 4, seed=1)
    params.biases["b_z"].values[:] = -1e6
    h_prev = np.array([0.5, -0.4, 0.2, 0.8])
    out = cell_step(CellKind.GRU, params, _state("gru", h_prev), Tensor([0.1, 0.2, 0.3]))
    assert np.max(np.abs(out.h.values - h_prev)) < 1e-9


def test_lstm_forget_open_input_output_closed():
    params = init_params(CellKind.LSTM, 3, 4, seed=2)
    params.biases["b_f"].values[:] = 1e6
    params.biases["b_i"].values[:] = -1e6
    params.biases["b_o"].values[:] = -1e6
    c_prev = np.array([0.7, -0.1, 0.4, -0.9])
    out = cell_step(
        CellKind.LSTM,
        params,
        _state("lstm", np.array([0.2, 0.1, -0.3, 0.5]), c_prev),
        Tensor([1.0, -1.0, 0.5]),
    )
    assert np.max(np.abs(out.c.values - c_prev)) < 1e-9
    assert np.max(np.abs(out.h.values)) < 1e-9


@pytest.mark.parametrize("kind", [CellKind.RNN, CellKind.GRU, CellKind.LSTM])
def test_cell_step_matches_straight_line_reimplementation(kind):
    rng = np.random.default_rng(42)
    d, h = 5, 7
    params = init_params(kind, d, h, seed=99)
    h_prev = rng.normal(scale=0.5, size=h)
    c_prev = rng.normal(scale=0.5, size=h)
    x = rng.normal(size=d)
    out = cell_step(kind, params, _state(kind, h_prev, c_prev), Tensor(x))
    if kind is CellKind.RNN:
        expected = straight_line_rnn(params, h_prev, x)
    elif kind is CellKind.GRU:
        expected = straight_line_gru(params, h_prev, x)
    else:
        expected, expected_c = straight_line_lstm(params, h_prev, c_prev, x)
        assert np.max(np.abs(out.c.values - expected_c)) < 1e-12
    assert np.max(np.abs(out.h.values - expected)) < 1e-12


def test_cell_step_deterministic_bitwise():
    params = init_params(CellKind.GRU, 4, 6, seed=5)
    state = _state("gru", np.linspace(-0.5, 0.5, 6))
    x = Tensor(np.linspace(0, 1, 4))
    a = cell_step(CellKind.GRU, params, state, x)
    b = cell_step(CellKind.GRU, params, state, x)
    assert np.array_equal(a.h.values, b.h.values)


def test_param_count_examples():
    assert param_count(CellKind.RNN, 4, 8) == 104
    assert param_count(CellKind.GRU, 4, 8) == 312
    assert param_count(CellKind.LSTM, 4, 8) == 416


@settings(max_examples=60, deadline=None)
@given(d=st.integers(1, 64), h=st.integers(1, 64))
def test_param_count_ratio_1_3_4(d, h):
    base = param_count(CellKind.RNN, d, h)
    assert param_count(CellKind.GRU, d, h) == 3 * base
    assert param_count(CellKind.LSTM, d, h) == 4 * base


@pytest.mark.parametrize("kind", [CellKind.RNN, CellKind.GRU, CellKind.LSTM])
def test_init_params_matches_declared_count(kind):
    params = init_params(kind, 9, 5, seed=3)
    assert params.count() == param_count(kind, 9, 5)


def test_param_count_rejects_nonpositive_dims():
    with pytest.raises(ShapeError):
        param_count(CellKind.RNN, 0, 4)
    with pytest.raises(ShapeError):
        init_params(CellKind.GRU, 4, 0, seed=0)


def test_init_params_deterministic_per_seed():
    a = init_params(CellKind.LSTM, 6, 4, seed=17)
    b = init_params(CellKind.LSTM, 6, 4, seed=17)
    for (name_a, ta), (name_b, tb) in zip(a.tensors(), b.tensors()):
        assert name_a == name_b
        assert np.array_equal(ta.values, tb.values)
    c = init_params(CellKind.LSTM, 6, 4, seed=18)
    assert any(
        not np.array_equal(ta.values, tc.values)
        for (_, ta), (_, tc) in zip(a.tensors(), c.tensors())
    )


def test_lstm_forget_bias_one_other_biases_zero():
    params = init_params(CellKind.LSTM, 3, 5, seed=11)
    assert np.array_equal(params.biases["b_f"].values, np.ones(5))
    for name in ("b_i", "b_o", "b_c"):
        assert np.array_equal(params.biases[name].values, np.zeros(5))
    gru = init_params(CellKind.GRU, 3, 5, seed=11)
    for name in ("b_z", "b_r", "b"):
        assert np.array_equal(gru.biases[name].values, np.zeros(5))


def test_weight_bound_follows_concatenated_fan():
    d, h = 10, 20
    bound = np.sqrt(6.0 / (d + 2 * h))
    params = init_params(CellKind.RNN, d, h, seed=4)
    w = params.weights["W_h"].values
    assert np.max(np.abs(w)) <= bound


@pytest.mark.parametrize("kind", [CellKind.RNN, CellKind.GRU, CellKind.LSTM])
def test_step_output_finite_over_many_seeds(kind):
    # bounded inputs (|x| <= 10) never produce non-finite states
    d, h = 6, 8
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        params = init_params(kind, d, h, seed=seed)
        state = _state(kind, rng.uniform(-1, 1, size=h), rng.uniform(-1, 1, size=h))
        x = Tensor(rng.uniform(-10, 10, size=d))
        out = cell_step(kind, params, state, x)
        assert np.all(np.isfinite(out.h.values))
        if out.c is not None:
            assert np.all(np.isfinite(out.c.values))


def test_rnn_and_lstm_hidden_bounded_by_one():
    rng = np.random.default_rng(0)
    for kind in (CellKind.RNN, CellKind.LSTM):
        params = init_params(kind, 4, 6, seed=8)
        state = _state(kind, rng.uniform(-1, 1, 6), rng.uniform(-3, 3, 6))
        out = cell_step(kind, params, state, Tensor(rng.uniform(-10, 10, 4)))
        assert np.all(np.abs(out.h.values) < 1.0)


def test_gru_hidden_bounded_by_max_of_prev_and_one():
    rng = np.random.default_rng(1)
    params = init_params(CellKind.GRU, 4, 6, seed=9)
    h_prev = rng.uniform(-2.0, 2.0, 6)
    out = cell_step(CellKind.GRU, params, _state("gru", h_prev), Tensor(rng.uniform(-10, 10, 4)))
    bound = max(np.max(np.abs(h_prev)), 1.0)
    assert np.all(np.abs(out.h.values) <= bound + 1e-12)


def test_lstm_requires_cell_state():
    params = init_params(CellKind.LSTM, 3, 4, seed=0)
    with pytest.raises(ShapeError):
        cell_step(CellKind.LSTM, params, CellState(h=Tensor(np.zeros(4)), c=None), Tensor(np.zeros(3)))


def test_dimension_mismatch_raises():
    params = init_params(CellKind.RNN, 3, 4, seed=0)
    with pytest.raises(ShapeError):
        cell_step(CellKind.RNN, params, _state("rnn", np.zeros(4)), Tensor(np.zeros(5)))
    with pytest.raises(ShapeError):
        cell_step(CellKind.RNN, params, _state("rnn", np.zeros(3)), Tensor(np.zeros(3)))


@pytest.mark.parametrize("kind", [CellKind.RNN, CellKind.GRU, CellKind.LSTM])
def test_gradient_of_step_wrt_every_parameter(kind):
    d, h = 3, 4
    params = init_params(kind, d, h, seed=21)
    rng = np.random.default_rng(2)
    h_prev = rng.normal(scale=0.3, size=h)
    c_prev = rng.normal(scale=0.3, size=h)
    x = rng.normal(size=d)

    for name, tensor in params.tensors():
        def f(t, _name=name):
            saved = params.weights.get(_name) or params.biases.get(_name)
            target = params.weights if _name in params.weights else params.biases
            target[_name] = t
            try:
                out = cell_step(kind, params, _state(kind, h_prev, c_prev), Tensor(x))
                return nc.reduce_sum(out.h)
            finally:
                target[_name] = saved

        probe = Tensor(tensor.values.copy(), requires_grad=True)
        err = nc.gradient_check(f, probe)
        assert err < 1e-4, f"{kind.value} parameter {name}: rel error {err}"


def test_sequence_runtime_scales_linearly():
    # doubling the sequence length should not triple the runtime
    kind = CellKind.GRU
    d = h = 16
    params = init_params(kind, d, h, seed=6)
    x = Tensor(np.zeros(d))

    def run(steps):
        state = cells.zero_state(kind, h)
        t0 = time.perf_counter()
        for _ in range(steps):
            state = cell_step(kind, params, state, x)
        return time.perf_counter() - t0

    run(64)  # warmup
    t1 = min(run(64) for _ in range(3))
    t2 = min(run(128) for _ in range(3))
    assert t2 / t1 < 3.0

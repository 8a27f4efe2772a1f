import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import check_model, tiny_model
from oracles import central_difference, lstm_cell_scalar
from sandhiseg import nn


def layer(rng, d, h, scale=0.5):
    return nn.LstmLayerParams(
        rng.uniform(-scale, scale, (4 * h, d)),
        rng.uniform(-scale, scale, (4 * h, h)),
        rng.uniform(-scale, scale, 4 * h),
    )


class TestLstmCell:
    def test_zero_case(self):
        p = nn.LstmLayerParams(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
        h, c = nn.lstm_cell(np.zeros(3), np.zeros(2), np.zeros(2), p)
        assert np.array_equal(h.data, np.zeros(2)) and np.array_equal(c.data, np.zeros(2))

    def test_forget_gate_pass_through(self):
        H = 2
        b = np.zeros(4 * H)
        b[:H] = -50.0  # input gate closed
        b[H:2 * H] = 50.0  # forget gate open
        p = nn.LstmLayerParams(np.zeros((4 * H, 3)), np.zeros((4 * H, H)), b)
        c_prev = np.array([1e6, -3e5])
        _, c = nn.lstm_cell(np.ones(3), np.zeros(H), c_prev, p)
        np.testing.assert_allclose(c.data, c_prev, rtol=1e-12)

    def test_matches_scalar_formula(self):
        rng = np.random.default_rng(1234)
        p = layer(rng, 3, 2)
        x, h0, c0 = rng.normal(size=3), rng.normal(size=2), rng.normal(size=2)
        h, c = nn.lstm_cell(x, h0, c0, p)
        h_ref, c_ref = lstm_cell_scalar(
            x.tolist(), h0.tolist(), c0.tolist(), p.W.data.tolist(), p.U.data.tolist(), p.b.data.tolist()
        )
        np.testing.assert_allclose(h.data, h_ref, rtol=0, atol=1e-12)
        np.testing.assert_allclose(c.data, c_ref, rtol=0, atol=1e-12)

    def test_batched_rows_match_unbatched(self):
        rng = np.random.default_rng(5)
        p = layer(rng, 4, 3)
        X, Hp, Cp = rng.normal(size=(5, 4)), rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        h, c = nn.lstm_cell(X, Hp, Cp, p)
        for r in range(5):
            hr, cr = nn.lstm_cell(X[r], Hp[r], Cp[r], p)
            np.testing.assert_allclose(h.data[r], hr.data, atol=1e-14)
            np.testing.assert_allclose(c.data[r], cr.data, atol=1e-14)

    def test_shape_mismatch(self):
        p = nn.LstmLayerParams(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
        with pytest.raises(ValueError):
            nn.lstm_cell(np.zeros(4), np.zeros(2), np.zeros(2), p)
        with pytest.raises(ValueError):
            nn.LstmLayerParams(np.zeros((8, 3)), np.zeros((8, 3)), np.zeros(8))

    def test_gradients(self):
        rng = np.random.default_rng(2)
        p = layer(rng, 3, 4)
        x = nn.parameter(rng.normal(size=(2, 3)))
        h0 = nn.parameter(rng.normal(size=(2, 4)))
        c0 = nn.parameter(rng.normal(size=(2, 4)))
        for v in (p.W, p.U, p.b):
            v.requires_grad = True
        weights = rng.normal(size=(2, 4))

        def forward():
            h, c = nn.lstm_cell(x, h0, c0, p)
            return nn.add(nn.sum_all(nn.mul(h, weights)), nn.sum_all(nn.mul(c, c)))

        params = {"x": x, "h0": h0, "c0": c0, "W": p.W, "U": p.U, "b": p.b}
        analytic = nn.gradients(forward(), params)
        numeric = central_difference(lambda: float(forward().data), {k: v.data for k, v in params.items()})
        for k in params:
            np.testing.assert_allclose(analytic[k].reshape(-1), numeric[k], rtol=1e-6, atol=1e-9)


class TestAttention:
    def test_single_state(self):
        ctx, w = nn.attention(np.array([0.3, -1.0]), np.array([[2.0, 5.0]]))
        assert w.tolist() == [1.0]
        assert ctx.data.tolist() == [2.0, 5.0]

    def test_identical_states(self):
        s = np.array([0.5, -0.25, 2.0])
        ctx, w = nn.attention(np.array([1.0, 2.0, 3.0]), np.stack([s] * 4))
        np.testing.assert_allclose(w, [0.25] * 4)
        np.testing.assert_allclose(ctx.data, s)

    def test_two_states(self):
        ctx, w = nn.attention(np.array([1.0, 0.0]), np.array([[1.0, 0.0], [0.0, 1.0]]))
        e = math.e
        np.testing.assert_allclose(w, [e / (e + 1), 1 / (e + 1)], rtol=1e-12)
        assert w[0] == pytest.approx(0.7311, abs=5e-5)

    def test_empty_states(self):
        with pytest.raises(ValueError):
            nn.attention(np.zeros(2), np.zeros((0, 2)))

    def test_mask_excludes_positions(self):
        q = np.array([[1.0, 1.0]])
        S = np.array([[[1.0, 0.0], [9.0, 9.0]]])
        ctx, w = nn.attention(q, S, np.array([[True, False]]))
        assert w.tolist() == [[1.0, 0.0]]
        assert ctx.data.tolist() == [[1.0, 0.0]]

    def test_fully_masked_row_is_zero(self):
        ctx, w = nn.attention(np.ones((1, 2)), np.ones((1, 3, 2)), np.zeros((1, 3), dtype=bool))
        assert not np.any(w) and not np.any(ctx.data)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 4, 2), elements=st.floats(-30, 30)), arrays(np.float64, (3, 2), elements=st.floats(-30, 30)))
    def test_weights_are_distributions(self, S, q):
        _, w = nn.attention(q, S)
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)


class TestSoftmaxXent:
    def test_uniform(self):
        loss, probs = nn.softmax_xent(np.zeros(7), 3)
        assert float(loss.data) == pytest.approx(math.log(7), rel=1e-14)

    def test_confident(self):
        logits = np.zeros(5)
        logits[2] = 40.0
        loss, _ = nn.softmax_xent(logits, 2)
        assert float(loss.data) < 1e-9

    def test_hand_value(self):
        loss, _ = nn.softmax_xent(np.array([1.0, 2.0, 3.0]), 2)
        e = math.e
        expected = -math.log(e**3 / (e + e**2 + e**3))
        assert float(loss.data) == pytest.approx(expected, rel=1e-13)
        assert float(loss.data) == pytest.approx(0.40761, abs=5e-6)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            nn.softmax_xent(np.zeros(3), 3)
        with pytest.raises(ValueError):
            nn.softmax_xent(np.zeros(3), -1)

    def test_masked_rows_contribute_zero(self):
        logits = np.random.default_rng(0).normal(size=(3, 4))
        full, _ = nn.softmax_xent(logits[:2], [1, 2])
        masked, _ = nn.softmax_xent(logits, [1, 2, 0], [True, True, False])
        assert float(full.data) == float(masked.data)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (6,), elements=st.floats(-500, 500)))
    def test_probs_sum_to_one(self, logits):
        _, p = nn.softmax_xent(logits, 0)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) <= 1e-9


class TestDropout:
    def test_eval_identity(self):
        x = np.random.default_rng(0).normal(size=(4, 5))
        out = nn.dropout(x, 0.5, training=False)
        assert np.array_equal(out.data, x)

    def test_rate_zero(self):
        x = np.arange(6.0)
        assert np.array_equal(nn.dropout(x, 0.0, True, np.random.default_rng(0)).data, x)

    def test_rate_one(self):
        with pytest.raises(ValueError):
            nn.dropout(np.ones(3), 1.0, True, np.random.default_rng(0))

    def test_monte_carlo(self):
        x = np.full(200_000, 3.0)
        out = nn.dropout(x, 0.2, True, np.random.default_rng(42)).data
        frac = np.mean(out == 0)
        assert abs(frac - 0.2) <= 0.02
        assert out.mean() == pytest.approx(3.0, rel=0.01)
        assert np.allclose(out[out != 0], 3.0 / 0.8)


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        params = {"w": np.array([1.0, -2.0])}
        nn.adam_step(params, {"w": np.zeros(2)}, nn.Adam())
        assert params["w"].tolist() == [1.0, -2.0]

    def test_first_step(self):
        params = {"w": np.zeros(3)}
        state = nn.Adam(lr=0.001, eps=1e-8)
        nn.adam_step(params, {"w": np.ones(3)}, state)
        assert state.t == 1
        np.testing.assert_allclose(params["w"], -0.001 / (1 + 1e-8), rtol=1e-15)

    def test_matches_recurrence(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=4)
        params = {"w": w.copy()}
        state = nn.Adam(lr=0.01, beta1=0.8, beta2=0.99, eps=1e-6)
        m = v = np.zeros(4)
        for t in range(1, 6):
            g = rng.normal(size=4)
            m = 0.8 * m + 0.2 * g
            v = 0.99 * v + 0.01 * g * g
            w = w - 0.01 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.99**t)) + 1e-6)
            nn.adam_step(params, {"w": g}, state)
        np.testing.assert_allclose(params["w"], w, rtol=1e-13)

    def test_zero_gradient_after_steps(self):
        params = {"w": np.array([0.5])}
        state = nn.Adam()
        nn.adam_step(params, {"w": np.array([1.0])}, state)
        before = params["w"].copy()
        for _ in range(3):
            nn.adam_step(params, {"w": np.array([0.0])}, state)
        # momentum keeps moving the parameter; the step size stays bounded by lr
        assert np.all(np.abs(params["w"] - before) <= 3 * state.lr + 1e-12)

    @pytest.mark.parametrize("kw", [{"beta1": 1.0}, {"beta2": 1.0}, {"lr": 0.0}, {"eps": 0.0}, {"beta1": -0.1}])
    def test_bad_hyperparameters(self, kw):
        with pytest.raises(ValueError):
            nn.Adam(**kw)

    def test_non_finite_gradient_names_parameter(self):
        params = {"a": np.zeros(2), "b": np.zeros(2)}
        with pytest.raises(nn.NonFiniteGradientError, match="'b'"):
            nn.adam_step(params, {"a": np.ones(2), "b": np.array([1.0, np.nan])}, nn.Adam())
        assert params["a"].tolist() == [0.0, 0.0]

    def test_clip(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        norm = nn.clip_grad_norm(grads, 1.0)
        assert norm == 5.0
        assert grads["a"][0] == pytest.approx(0.6) and grads["b"][0] == pytest.approx(0.8)


class TestBackward:
    def test_sum(self):
        theta = nn.parameter(np.arange(5.0))
        g = nn.gradients(nn.sum_all(theta), {"t": theta})["t"]
        assert g.tolist() == [1.0] * 5

    def test_half_square_norm(self):
        data = np.array([1.5, -2.0, 0.25])
        theta = nn.parameter(data)
        g = nn.gradients(nn.scale(nn.sum_all(nn.mul(theta, theta)), 0.5), {"t": theta})["t"]
        np.testing.assert_allclose(g, data)

    def test_shared_subexpression(self):
        x = nn.parameter(np.array([2.0]))
        y = nn.tanh(x)
        out = nn.sum_all(nn.add(nn.mul(y, y), y))
        g = nn.gradients(out, {"x": x})["x"]
        t = math.tanh(2.0)
        assert g[0] == pytest.approx((2 * t + 1) * (1 - t * t), rel=1e-14)

    def test_no_grad(self):
        x = nn.parameter(np.ones(2))
        with nn.no_grad():
            y = nn.sum_all(x)
        assert not y.requires_grad

    def test_unreachable_parameter_gets_zero(self):
        x, z = nn.parameter(np.ones(2)), nn.parameter(np.ones(3))
        g = nn.gradients(nn.sum_all(x), {"x": x, "z": z})
        assert g["z"].tolist() == [0.0] * 3

    def test_building_blocks(self):
        rng = np.random.default_rng(3)
        a = nn.parameter(rng.normal(size=(3, 4)))
        W = nn.parameter(rng.normal(size=(2, 8)))
        b = nn.parameter(rng.normal(size=2))
        V = nn.parameter(rng.normal(size=(2, 4)))
        table = nn.parameter(rng.normal(size=(5, 4)))
        ids = np.array([1, 4, 1])
        keep = np.array([True, False, True])

        def forward():
            e = nn.embedding(table, ids)
            x = nn.concat([nn.sigmoid(a), e])
            y = nn.tanh(nn.affine(x, W, b))
            y = nn.blend(y, nn.affine(e, V), keep)
            s = nn.stack([y, nn.scale(y, 0.5)], axis=1)
            return nn.sum_all(nn.mul(s, s))

        params = {"a": a, "W": W, "b": b, "V": V, "table": table}
        analytic = nn.gradients(forward(), params)
        numeric = central_difference(lambda: float(forward().data), {k: v.data for k, v in params.items()})
        for k in params:
            np.testing.assert_allclose(analytic[k].reshape(-1), numeric[k], rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("num_layers,attention,seed", [(1, True, 0), (1, False, 1), (3, True, 2), (3, False, 3)])
def test_full_model_gradcheck(num_layers, attention, seed):
    # h=1e-3 keeps the float64 noise in the loss difference well below 1e-4 relative
    model, batch = tiny_model(seed, num_layers, attention)
    worst, checked = check_model(model, batch, h=1e-3)
    assert checked > 0
    assert worst < 1e-4

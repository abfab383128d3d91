import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from coscov import ops
from coscov.errors import ConfigError, DataError, NumericError
from coscov.tensor import Tape, Tensor, set_debug

from conftest import fd_grad, rel_err


def conv_oracle(x, w):
    """Direct triple loop of the same-padded cross-correlation."""
    B, Cin, S = x.shape
    _, Cout, L = w.shape
    out = np.zeros((B, Cout, S))
    for b in range(B):
        for co in range(Cout):
            for n in range(S):
                for ci in range(Cin):
                    for l in range(L):
                        j = n + l - L // 2
                        if 0 <= j < S:
                            out[b, co, n] += x[b, ci, j] * w[ci, co, l]
    return out


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad, dtype=np.float64)


class TestConv1d:
    @pytest.mark.parametrize("filt, expected", [([1.0], [1, 2, 3]), ([0.0, 1.0, 0.0], [1, 2, 3]),
                                                ([1.0, 1.0, 1.0], [3, 6, 5])])
    def test_examples(self, filt, expected):
        x = t64([[[1.0, 2.0, 3.0]]])
        w = t64(np.array(filt)[None, None, :])
        np.testing.assert_allclose(ops.conv1d(x, w).data[0, 0], expected)

    @pytest.mark.parametrize("L", [1, 2, 3, 4, 7, 12])
    def test_matches_loop_oracle(self, L):
        rng = np.random.default_rng(L)
        x, w = rng.normal(size=(2, 3, 11)), rng.normal(size=(3, 4, L))
        np.testing.assert_allclose(ops.conv1d(t64(x), t64(w)).data, conv_oracle(x, w), atol=1e-12)

    def test_filter_longer_than_signal(self):
        rng = np.random.default_rng(0)
        x, w = rng.normal(size=(1, 2, 3)), rng.normal(size=(2, 1, 8))
        np.testing.assert_allclose(ops.conv1d(t64(x), t64(w)).data, conv_oracle(x, w), atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ConfigError):
            ops.conv1d(t64(np.zeros((1, 2, 5))), t64(np.zeros((3, 1, 3))))

    def test_backward_identity_filter(self):
        x = t64(np.random.default_rng(0).normal(size=(1, 1, 6)), grad=True)
        g = np.random.default_rng(1).normal(size=(1, 1, 6))
        with Tape() as tape:
            y = ops.conv1d(x, t64([[[1.0]]]))
        tape.backward(y, g)
        np.testing.assert_array_equal(x.grad, g)

    def test_zero_upstream_gives_zero_grads(self):
        x = t64(np.ones((1, 2, 5)), grad=True)
        w = t64(np.ones((2, 2, 3)), grad=True)
        with Tape() as tape:
            y = ops.conv1d(x, w)
        tape.backward(y, np.zeros(y.shape))
        assert not x.grad.any() and not w.grad.any()

    def test_backward_five_samples_fd(self):
        rng = np.random.default_rng(5)
        xv, wv = rng.normal(size=(1, 2, 5)), rng.normal(size=(2, 3, 3))
        proj = rng.normal(size=(1, 3, 5))
        x, w = t64(xv, True), t64(wv, True)
        with Tape() as tape:
            y = ops.conv1d(x, w)
        tape.backward(y, proj)
        f = lambda: float((ops.conv1d(t64(xv), t64(wv)).data * proj).sum())  # noqa: E731
        assert rel_err(x.grad, fd_grad(f, xv)) <= 1e-5
        assert rel_err(w.grad, fd_grad(f, wv)) <= 1e-5

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 10), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
    def test_linearity(self, L, S, a, b, seed):
        rng = np.random.default_rng(seed)
        x, y, w = rng.normal(size=(2, 2, S)), rng.normal(size=(2, 2, S)), t64(rng.normal(size=(2, 3, L)))
        lhs = ops.conv1d(t64(a * x + b * y), w).data
        rhs = a * ops.conv1d(t64(x), w).data + b * ops.conv1d(t64(y), w).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestMaxPool:
    def test_example(self):
        np.testing.assert_array_equal(ops.maxpool1d(t64([[[1, 3, 2, 5]]]), 2).data, [[[3, 5]]])

    def test_window_one_identity(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 7))
        np.testing.assert_array_equal(ops.maxpool1d(t64(x), 1).data, x)

    def test_one_second_input(self):
        assert ops.maxpool1d(Tensor(np.zeros((1, 1, 16000))), 10).shape == (1, 1, 1600)

    def test_remainder_dropped(self):
        assert ops.maxpool1d(t64(np.zeros((1, 1, 50))), 4).shape == (1, 1, 12)

    @pytest.mark.parametrize("w", [0, 6])
    def test_bad_window(self, w):
        with pytest.raises(ConfigError):
            ops.maxpool1d(t64(np.zeros((1, 1, 5))), w)

    def test_ties_route_to_first(self):
        x = t64([[[2.0, 2.0, 1.0, 1.0]]], grad=True)
        with Tape() as tape:
            y = ops.maxpool1d(x, 2)
        tape.backward(y, np.ones(y.shape))
        np.testing.assert_array_equal(x.grad, [[[1, 0, 1, 0]]])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (2, 2, 13), elements=st.floats(-10, 10)), st.integers(1, 6))
    def test_gradient_sits_at_argmax(self, xv, window):
        x = t64(xv, grad=True)
        with Tape() as tape:
            y = ops.maxpool1d(x, window)
        tape.backward(y, np.random.default_rng(0).uniform(0.5, 1.5, size=y.shape))
        so = y.shape[-1]
        win = xv[..., :so * window].reshape(2, 2, so, window)
        g = x.grad[..., :so * window].reshape(2, 2, so, window)
        assert ((g != 0).sum(axis=-1) <= 1).all()
        first = win.argmax(axis=-1)
        np.testing.assert_array_equal(np.take_along_axis(g, first[..., None], -1)[..., 0] != 0, True)
        assert not x.grad[..., so * window:].any()


class TestElementwise:
    def test_tanh_zero(self):
        assert ops.tanh(t64([0.0])).data[0] == 0.0

    def test_gap_time_constant(self):
        np.testing.assert_allclose(ops.gap_time(t64(np.full((2, 3, 17), 0.37))).data, 0.37)

    def test_gap_channels_axis(self):
        x = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
        np.testing.assert_allclose(ops.gap_channels(t64(x)).data, x.mean(axis=1))

    def test_dense_2x3_fd(self):
        rng = np.random.default_rng(2)
        xv, wv, bv = rng.normal(size=(2, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)
        x, w, b = t64(xv, True), t64(wv, True), t64(bv, True)
        proj = rng.normal(size=(2, 4))
        with Tape() as tape:
            y = ops.dense(x, w, b)
        tape.backward(y, proj)
        f = lambda: float((ops.dense(t64(xv), t64(wv), t64(bv)).data * proj).sum())  # noqa: E731
        for t, v in ((x, xv), (w, wv), (b, bv)):
            assert rel_err(t.grad, fd_grad(f, v)) <= 1e-5

    def test_dense_shape_mismatch(self):
        with pytest.raises(ConfigError):
            ops.dense(t64(np.zeros((2, 3))), t64(np.zeros((4, 1))))

    def test_broadcast_add_unbroadcasts_grad(self):
        a, b = t64(np.ones((2, 3, 4)), True), t64(np.ones(4), True)
        with Tape() as tape:
            y = ops.add(a, b)
        tape.backward(y, np.ones(y.shape))
        np.testing.assert_array_equal(b.grad, np.full(4, 6.0))


class TestDropout:
    def test_p_zero_identity(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 4))
        out = ops.spatial_dropout1d(t64(x), 0.0, True, np.random.default_rng(1))
        np.testing.assert_array_equal(out.data, x)

    def test_inference_identity(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 4))
        np.testing.assert_array_equal(ops.spatial_dropout1d(t64(x), 0.9, False, None).data, x)

    def test_dropped_fraction(self):
        out = ops.spatial_dropout1d(t64(np.ones((1, 10000, 4))), 0.5, True, np.random.default_rng(0)).data
        dropped = (out[0] == 0).all(axis=1)
        assert abs(dropped.mean() - 0.5) <= 0.02
        np.testing.assert_allclose(out[0][~dropped], 2.0)
        # whole channels go together
        assert ((out[0] == 0).all(axis=1) | (out[0] != 0).all(axis=1)).all()

    @pytest.mark.parametrize("p", [1.0, 1.5, -0.1])
    def test_bad_p(self, p):
        with pytest.raises(ConfigError):
            ops.spatial_dropout1d(t64(np.ones((1, 1, 1))), p, True, np.random.default_rng(0))


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = ops.softmax_cross_entropy(t64(np.zeros((3, 10))), np.array([0, 4, 9]))
        assert loss.item() == pytest.approx(np.log(10), abs=1e-12)

    def test_confident_logits(self):
        z = np.full((2, 3), -1e3)
        z[[0, 1], [2, 0]] = 1e3
        assert ops.softmax_cross_entropy(t64(z), np.array([2, 0])).item() == pytest.approx(0.0, abs=1e-12)

    def test_three_class_fd(self):
        rng = np.random.default_rng(3)
        zv, y = rng.normal(size=(4, 3)), np.array([0, 2, 1, 2])
        z = t64(zv, True)
        with Tape() as tape:
            loss = ops.softmax_cross_entropy(z, y)
        tape.backward(loss)
        g = fd_grad(lambda: ops.softmax_cross_entropy(t64(zv), y).item(), zv)
        assert rel_err(z.grad, g) <= 1e-5
        p = np.exp(zv) / np.exp(zv).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(z.grad, (p - np.eye(3)[y]) / 4, atol=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            ops.softmax_cross_entropy(t64(np.zeros((1, 3))), np.array([3]))

    def test_single_class_rejected(self):
        with pytest.raises(ConfigError):
            ops.softmax_cross_entropy(t64(np.zeros((1, 1))), np.array([0]))


class TestTape:
    def test_reverse_order(self):
        x = t64([0.3], True)
        with Tape() as tape:
            a = ops.tanh(x)
            b = ops.mul(a, a)
            ops.add(b, x)
        names = [r.out.name for r in tape.records]
        assert names == ["tanh", "mul", "add"]

    def test_paths_accumulate(self):
        x = t64([0.7], True)
        with Tape() as tape:
            y = ops.add(ops.mul(x, x), ops.tanh(x))
        tape.backward(y)
        assert x.grad[0] == pytest.approx(2 * 0.7 + 1 - np.tanh(0.7) ** 2, abs=1e-14)

    def test_no_record_without_grad(self):
        with Tape() as tape:
            ops.tanh(t64([1.0]))
        assert len(tape) == 0

    def test_bit_identical_replay(self):
        def run():
            rng = np.random.default_rng(11)
            x = Tensor(rng.normal(size=(2, 2, 9)).astype(np.float32))
            w = Tensor(rng.normal(size=(2, 3, 4)).astype(np.float32), requires_grad=True)
            with Tape() as tape:
                loss = ops.softmax_cross_entropy(ops.gap_time(ops.tanh(ops.conv1d(x, w))), np.array([0, 2]))
            tape.backward(loss)
            return loss.data.tobytes(), w.grad.tobytes()
        assert run() == run()

    def test_debug_mode_flags_nonfinite(self):
        set_debug(True)
        try:
            with pytest.raises(NumericError):
                ops.tanh(t64([np.nan]))
        finally:
            set_debug(False)

    def test_int_input_cast(self):
        t = Tensor(np.arange(3))
        assert t.dtype == np.float32 and t.shape == (3,)

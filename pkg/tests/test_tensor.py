import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orsisod import tensor as T
from orsisod.errors import NonFiniteError, ShapeError, StateError
from orsisod.gradcheck import check_gradients, projected
from orsisod.optim import ParamStore, rmsprop_step
from orsisod.tensor import Tensor, topological_order


def conv_oracle(x, w, b):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    p = (k - 1) // 2
    out = np.zeros((n, cout, h, wd))
    for ni in range(n):
        for o in range(cout):
            for y in range(h):
                for xx in range(wd):
                    acc = b[o]
                    for c in range(cin):
                        for i in range(k):
                            for j in range(k):
                                yy, xj = y + i - p, xx + j - p
                                if 0 <= yy < h and 0 <= xj < wd:
                                    acc += w[o, c, i, j] * x[ni, c, yy, xj]
                    out[ni, o, y, xx] = acc
    return out


class TestConv2d:
    def test_identity_1x1(self, rng):
        x = rng.standard_normal((2, 1, 5, 5))
        out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, x)

    def test_box_filter_constant(self):
        c = 3.0
        out = T.conv2d(Tensor(np.full((1, 1, 5, 5), c)), Tensor(np.full((1, 1, 3, 3), 1 / 9)), Tensor(np.zeros(1))).data
        np.testing.assert_allclose(out[0, 0, 1:-1, 1:-1], c, rtol=1e-12)
        for y, x in ((0, 0), (0, 4), (4, 0), (4, 4)):
            assert out[0, 0, y, x] == pytest.approx(4 * c / 9, rel=1e-12)

    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_matches_loop_oracle(self, rng, k):
        x = rng.standard_normal((2, 2, 5, 5))
        w = rng.standard_normal((3, 2, k, k))
        b = rng.standard_normal(3)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(out, conv_oracle(x, w, b), atol=1e-12, rtol=0)

    def test_linearity(self, rng):
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        x, y = rng.standard_normal((2, 1, 2, 6, 6))
        a, b = 1.7, -0.4
        lhs = T.conv2d(Tensor(a * x + b * y), w).data
        rhs = a * T.conv2d(Tensor(x), w).data + b * T.conv2d(Tensor(y), w).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_errors(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        with pytest.raises(ShapeError):
            T.conv2d(x, Tensor(np.zeros((1, 3, 3, 3))))
        with pytest.raises(ValueError):
            T.conv2d(x, Tensor(np.zeros((1, 2, 2, 2))))


class TestPooling:
    def test_global_avg_pool(self, rng):
        assert T.global_avg_pool(Tensor(np.full((1, 2, 3, 3), 4.2))).data.ravel().tolist() == pytest.approx([4.2, 4.2])
        assert T.global_avg_pool(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])).item() == 2.5
        x = rng.standard_normal((2, 3, 4, 5))
        expected = np.array([[x[n, c].sum() / 20 for c in range(3)] for n in range(2)])
        np.testing.assert_allclose(T.global_avg_pool(Tensor(x)).data[:, :, 0, 0], expected, atol=1e-14)

    def test_channel_max_pool(self, rng):
        x = rng.standard_normal((1, 1, 3, 3))
        np.testing.assert_array_equal(T.channel_max_pool(Tensor(x)).data, x)
        px = np.array([2.0, 5.0, -1.0]).reshape(1, 3, 1, 1)
        assert T.channel_max_pool(Tensor(px)).item() == 5.0
        x = rng.standard_normal((2, 4, 3, 3))
        out = T.channel_max_pool(Tensor(x)).data
        for n in range(2):
            for y in range(3):
                for xx in range(3):
                    assert out[n, 0, y, xx] == max(x[n, c, y, xx] for c in range(4))

    def test_channel_max_tie_goes_to_lowest_index(self):
        x = Tensor(np.ones((1, 3, 1, 1)), requires_grad=True)
        T.sum_all(T.channel_max_pool(x)).backward()
        assert x.grad.ravel().tolist() == [1.0, 0.0, 0.0]


class TestLinearAlgebra:
    def test_fully_connected(self, rng):
        x = rng.standard_normal((2, 3, 1, 1))
        out = T.fully_connected(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)
        out = T.fully_connected(Tensor(np.array([3.0, 4.0]).reshape(1, 2, 1, 1)), Tensor([[1.0, 1.0]]), Tensor([0.0]))
        assert out.item() == 7.0
        w, b = rng.standard_normal((4, 3)), rng.standard_normal(4)
        out = T.fully_connected(Tensor(x), Tensor(w), Tensor(b)).data
        for n in range(2):
            for o in range(4):
                assert out[n, o, 0, 0] == pytest.approx(b[o] + sum(w[o, d] * x[n, d, 0, 0] for d in range(3)), abs=1e-12)
        with pytest.raises(ShapeError):
            T.fully_connected(Tensor(x), Tensor(np.zeros((4, 2))), Tensor(np.zeros(4)))

    def test_matmul(self, rng):
        a = rng.standard_normal((7, 5))
        np.testing.assert_array_equal(T.matmul(Tensor(a), Tensor(np.eye(5))).data, a)
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]])).data
        assert out.tolist() == [[3.0], [7.0]]
        b = rng.standard_normal((5, 3))
        out = T.matmul(Tensor(a), Tensor(b)).data
        oracle = np.zeros((7, 3))
        for i in range(7):
            for j in range(3):
                for q in range(5):
                    oracle[i, j] += a[i, q] * b[q, j]
        np.testing.assert_allclose(out, oracle, atol=1e-12, rtol=0)
        with pytest.raises(ShapeError):
            T.matmul(Tensor(a), Tensor(a))

    def test_softmax(self, rng):
        np.testing.assert_allclose(T.softmax(Tensor(np.full((1, 4), 2.5))).data, 0.25)
        big = T.softmax(Tensor([[0.0, 800.0]])).data
        assert big[0, 0] == pytest.approx(0.0, abs=1e-300) and big[0, 1] == 1.0
        row = rng.standard_normal(6)
        e = [np.exp(v) for v in row]
        np.testing.assert_allclose(T.softmax(Tensor(row[None])).data[0], [v / sum(e) for v in e], atol=1e-12, rtol=0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-100, 100))
    def test_softmax_rows_and_shift_invariance(self, row, shift):
        x = np.array([row, row])
        y = T.softmax(Tensor(x)).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)
        np.testing.assert_allclose(T.softmax(Tensor(x + shift)).data, y, atol=1e-9)


class TestElementwise:
    def test_sigmoid_zero(self):
        assert T.sigmoid(Tensor(0.0)).item() == 0.5

    def test_reshape_roundtrip(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        np.testing.assert_array_equal(T.reshape(T.reshape(Tensor(x), (2, 3, 16)), x.shape).data, x)
        with pytest.raises(ShapeError):
            T.reshape(Tensor(x), (5, 5))

    def test_upsample_nearest(self):
        out = T.upsample_nearest(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), 2).data[0, 0]
        assert out.tolist() == [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
        with pytest.raises(ValueError):
            T.upsample_nearest(Tensor(np.zeros((1, 1, 2, 2))), 0)

    def test_concat_and_transpose(self, rng):
        a, b = rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 1, 3, 3))
        np.testing.assert_array_equal(T.concat_channels([Tensor(a), Tensor(b)]).data, np.concatenate([a, b], 1))
        with pytest.raises(ShapeError):
            T.concat_channels([Tensor(a), Tensor(np.zeros((1, 1, 2, 2)))])
        m = rng.standard_normal((3, 5))
        np.testing.assert_array_equal(T.transpose(Tensor(m)).data, m.T)

    def test_broadcast_error(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))

    def test_non_finite_is_an_error(self):
        with pytest.raises(NonFiniteError):
            T.log(Tensor(np.zeros(3)))


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
        T.sum_all(x).backward()
        np.testing.assert_array_equal(x.grad, 1.0)

    def test_quadratic(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
        (T.sum_all(x * x) / 2.0).backward()
        np.testing.assert_allclose(x.grad, x.data, rtol=1e-15)

    def test_mean_sigmoid_conv_matches_finite_differences(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 5, 5)))
        w = Tensor(rng.standard_normal((2, 2, 3, 3)))
        b = Tensor(rng.standard_normal(2))
        errs = check_gradients(lambda: T.mean_all(T.sigmoid(T.conv2d(x, w, b))), {"x": x, "w": w, "b": b}, h=1e-5)
        assert max(errs.values()) <= 1e-4

    def test_fan_out_accumulates(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        T.sum_all(x * x + x * 3.0 + x).backward()
        assert x.grad.tolist() == [8.0]

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_determinism(self, rng):
        store = ParamStore()
        w = store.add("w", rng.standard_normal((3, 2, 3, 3)))
        x = Tensor(rng.standard_normal((2, 2, 6, 6)), requires_grad=True)
        loss = T.mean_all(T.softmax(T.reshape(T.conv2d(x, w), (2, 3, 36))))
        grads = []
        for _ in range(2):
            store.zero_grad()
            x.grad = None
            loss.backward()
            grads.append((w.grad.copy(), x.grad.copy()))
        assert grads[0][0].tobytes() == grads[1][0].tobytes()
        assert grads[0][1].tobytes() == grads[1][1].tobytes()

    def test_topological_order(self, rng):
        x = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        y = T.sigmoid(x)
        z = T.sum_all(y * x + T.matmul(y, x))
        order = topological_order(z)
        position = {id(n): i for i, n in enumerate(order)}
        for node in order:
            for p in node._parents:
                if p.requires_grad:
                    assert position[id(p)] < position[id(node)]
        assert len(position) == len(order)

    @pytest.mark.parametrize("op", ["avg_pool2", "upsample", "take", "concat"])
    def test_gradcheck_small_ops(self, rng, op):
        x = Tensor(rng.standard_normal((2, 2, 4, 4)))
        fns = {
            "avg_pool2": lambda: T.avg_pool2(x),
            "upsample": lambda: T.upsample_nearest(x, 3),
            "take": lambda: T.take(x, [1, 1, 0]),
            "concat": lambda: T.concat([x, x * 2.0], axis=0),
        }
        r = rng.standard_normal(fns[op]().shape)
        errs = check_gradients(lambda: projected(fns[op](), r), {"x": x})
        assert errs["x"] <= 1e-4


def rmsprop_scalar(p, grads, lr, momentum, decay, eps):
    sq = buf = 0.0
    for g in grads:
        sq = decay * sq + (1 - decay) * g * g
        buf = momentum * buf + g / (np.sqrt(sq) + eps)
        p = p - lr * buf
    return p


class TestRMSprop:
    def _store(self, value, grad):
        store = ParamStore()
        t = store.add("p", np.array([value]))
        t.grad = np.array([grad])
        return store, t

    def test_zero_gradient(self):
        store, t = self._store(1.5, 0.0)
        for _ in range(5):
            rmsprop_step(store)
        assert t.data.tolist() == [1.5]

    def test_zero_lr(self):
        store, t = self._store(1.5, 0.7)
        for _ in range(5):
            rmsprop_step(store, lr=0.0)
        assert t.data.tolist() == [1.5]

    def test_scalar_recurrence(self):
        store, t = self._store(1.0, 0.3)
        for _ in range(7):
            rmsprop_step(store, lr=1e-2, momentum=0.9, decay=0.99, eps=1e-8)
        expected = rmsprop_scalar(1.0, [0.3] * 7, 1e-2, 0.9, 0.99, 1e-8)
        assert t.data[0] == pytest.approx(expected, rel=1e-14)

    def test_missing_gradient(self):
        store = ParamStore()
        store.add("p", np.zeros(2))
        with pytest.raises(StateError):
            rmsprop_step(store)

    def test_state_shapes_and_unique_names(self, rng):
        store = ParamStore()
        store.add("a", rng.standard_normal((2, 3)))
        with pytest.raises(ValueError):
            store.add("a", np.zeros(1))
        store.zero_grad()
        rmsprop_step(store)
        assert store.square_avg["a"].shape == (2, 3) and store.momentum_buf["a"].shape == (2, 3)

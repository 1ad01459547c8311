import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import central_difference, gradcheck
from thcrl import tensor as T
from thcrl.errors import ContractError, DimensionError
from thcrl.optim import Adam, AdamState, adam_step
from thcrl.tensor import Tensor, no_grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _probe(out, rng_seed=99):
    """Contract an output with a fixed random array so every entry matters."""
    R = np.random.default_rng(rng_seed).uniform(-1, 1, out.shape)
    return T.sum_(T.mul(out, Tensor(R)))


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal((a @ b).data, [[1, 2], [3, 4]])

    def test_zero_cotangent_gives_zero_grads(self):
        a = Tensor(np.eye(2), requires_grad=True)
        b = Tensor(np.eye(2), requires_grad=True)
        out = T.sum_(T.mul(T.matmul(a, b), Tensor(np.zeros((2, 2)))))
        out.backward()
        assert not a.grad.any() and not b.grad.any()

    def test_gradient_matches_finite_differences(self, rng):
        arrays = [rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (4, 2))]
        assert gradcheck(lambda t: _probe(T.matmul(*t)), arrays, step=1e-5) < 1e-6

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestConv1d:
    def test_identity_kernel(self, rng):
        x = rng.standard_normal((3, 7))
        w = np.eye(3)[:, :, None]
        out = T.conv1d(Tensor(x), Tensor(w))
        np.testing.assert_allclose(out.data, x, rtol=0, atol=1e-15)

    def test_zero_input_gives_bias(self, rng):
        w = Tensor(rng.standard_normal((4, 2, 3)))
        b = Tensor([1.0, -2.0, 0.5, 3.0])
        out = T.conv1d(Tensor(np.zeros((2, 6))), w, b, padding=1)
        np.testing.assert_array_equal(out.data, np.repeat(b.data[:, None], 6, axis=1))

    @pytest.mark.parametrize("L,k,stride,padding", [(8, 3, 1, 1), (9, 3, 2, 0), (7, 2, 3, 2), (5, 5, 1, 0), (6, 1, 1, 0)])
    def test_matches_direct_loop(self, rng, L, k, stride, padding):
        x = rng.standard_normal((2, 3, L))
        w = rng.standard_normal((4, 3, k))
        b = rng.standard_normal(4)
        out = T.conv1d(Tensor(x), Tensor(w), Tensor(b), stride, padding).data
        l_out = (L + 2 * padding - k) // stride + 1
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
        ref = np.zeros((2, 4, l_out))
        for n in range(2):
            for o in range(4):
                for l in range(l_out):
                    ref[n, o, l] = b[o] + (w[o] * xp[n, :, l * stride : l * stride + k]).sum()
        assert out.shape == (2, 4, l_out)
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_channels_last_agrees(self, rng):
        x = rng.standard_normal((2, 3, 8))
        w = Tensor(rng.standard_normal((5, 3, 3)))
        first = T.conv1d(Tensor(x), w, padding=1).data
        last = T.conv1d(Tensor(x.transpose(0, 2, 1)), w, padding=1, channels_last=True).data
        np.testing.assert_allclose(last.transpose(0, 2, 1), first, rtol=1e-13)

    def test_gradient_k3_pad1(self, rng):
        arrays = [rng.uniform(-1, 1, (2, 8)), rng.uniform(-1, 1, (3, 2, 3)), rng.uniform(-1, 1, 3)]
        err = gradcheck(lambda t: _probe(T.conv1d(t[0], t[1], t[2], 1, 1)), arrays, step=1e-5)
        assert err < 1e-6

    def test_gradient_strided(self, rng):
        arrays = [rng.uniform(-1, 1, (2, 2, 9)), rng.uniform(-1, 1, (3, 2, 3)), rng.uniform(-1, 1, 3)]
        err = gradcheck(lambda t: _probe(T.conv1d(t[0], t[1], t[2], 2, 1)), arrays, step=1e-5)
        assert err < 1e-6

    def test_kernel_longer_than_input(self):
        with pytest.raises(DimensionError):
            T.conv1d(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 1, 5))))


class TestConvTransposed:
    def test_doubles_length(self, rng):
        out = T.conv1d_transposed(Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((3, 2, 2))), stride=2)
        assert out.shape == (2, 8)

    def test_zero_input_gives_bias(self, rng):
        b = Tensor([0.5, -1.0])
        out = T.conv1d_transposed(Tensor(np.zeros((3, 4))), Tensor(rng.standard_normal((3, 2, 2))), b)
        np.testing.assert_array_equal(out.data, np.repeat(b.data[:, None], 8, axis=1))

    @pytest.mark.parametrize("k,stride", [(2, 2), (3, 2), (2, 1), (4, 3)])
    def test_matches_scatter_loop(self, rng, k, stride):
        x = rng.standard_normal((2, 3, 5))
        w = rng.standard_normal((3, 4, k))
        out = T.conv1d_transposed(Tensor(x), Tensor(w), stride=stride).data
        ref = np.zeros((2, 4, (5 - 1) * stride + k))
        for n in range(2):
            for c in range(3):
                for l in range(5):
                    for j in range(k):
                        ref[n, :, l * stride + j] += x[n, c, l] * w[c, :, j]
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_gradient(self, rng):
        arrays = [rng.uniform(-1, 1, (2, 4)), rng.uniform(-1, 1, (2, 3, 2)), rng.uniform(-1, 1, 3)]
        err = gradcheck(lambda t: _probe(T.conv1d_transposed(t[0], t[1], t[2], 2)), arrays, step=1e-5)
        assert err < 1e-6


class TestMaxPool:
    def test_hand_case(self):
        np.testing.assert_array_equal(T.maxpool1d(Tensor([[1.0, 3.0, 2.0, 0.0]]), 2).data, [[3.0, 2.0]])

    def test_ties_route_to_first_index(self):
        x = Tensor(np.full((2, 6), 4.0), requires_grad=True)
        out = T.maxpool1d(x, 2)
        np.testing.assert_array_equal(out.data, np.full((2, 3), 4.0))
        T.sum_(out).backward()
        np.testing.assert_array_equal(x.grad, np.tile([1.0, 0.0], (2, 3)))

    def test_ties_route_to_first_index_window3(self):
        x = Tensor(np.ones((1, 6)), requires_grad=True)
        T.sum_(T.maxpool1d(x, 3)).backward()
        np.testing.assert_array_equal(x.grad, [[1, 0, 0, 1, 0, 0]])

    def test_gradient(self, rng):
        arrays = [rng.uniform(-1, 1, (3, 8))]
        assert gradcheck(lambda t: _probe(T.maxpool1d(t[0], 2)), arrays, step=1e-5) < 1e-6

    def test_indivisible_length_message(self):
        with pytest.raises(DimensionError, match="d_psi"):
            T.maxpool1d(Tensor(np.ones((2, 5))), 2)


class TestElementwise:
    @pytest.mark.parametrize(
        "op",
        [
            lambda t: T.add(t[0], t[1]),
            lambda t: T.sub(t[0], t[1]),
            lambda t: T.hadamard(t[0], t[1]),
            lambda t: T.relu(t[0]),
            lambda t: T.sigmoid(t[0]),
            lambda t: T.exp(t[0]),
            lambda t: T.log(T.add(T.mul(t[0], t[0]), Tensor(np.full((3, 4), 0.5)))),
            lambda t: T.concat([t[0], t[1]], axis=1),
            lambda t: T.concat([t[0], t[1]], axis=0),
            lambda t: T.mean(t[0], axis=1),
            lambda t: T.mean(t[0]),
            lambda t: T.reshape(t[0], (2, 6)),
            lambda t: T.transpose(t[0]),
            lambda t: T.cosine_rows(t[0], t[1]),
            lambda t: T.normalize_rows(t[0]),
            lambda t: T.stack([t[0], t[1]], axis=2),
            lambda t: T.take_rows(t[0], [2, 0, 2]),
            lambda t: T.pick(t[0], [0, 1, 2], [3, 1, 0]),
            lambda t: T.linear(t[0], T.transpose(t[1])),
        ],
        ids=["add", "sub", "hadamard", "relu", "sigmoid", "exp", "log", "concat1", "concat0", "mean_axis",
             "mean", "reshape", "transpose", "cosine", "normalize", "stack", "take_rows", "pick", "linear"],
    )
    def test_gradient(self, rng, op):
        arrays = [rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (3, 4))]
        assert gradcheck(lambda t: _probe(op(t)), arrays) < 1e-4

    def test_broadcast_add_gradient(self, rng):
        arrays = [rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (4,))]
        assert gradcheck(lambda t: _probe(T.add(t[0], t[1])), arrays) < 1e-4

    def test_cosine_values(self):
        v = Tensor([[3.0, -4.0]])
        assert T.cosine_rows(v, v).item() == pytest.approx(1.0, abs=1e-15)
        assert T.cosine_rows(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]])).item() == 0.0
        assert T.cosine_rows(Tensor([[1.0, 0.0]]), Tensor([[1.0, 1.0]])).item() == pytest.approx(0.70710678, abs=1e-8)

    def test_cosine_zero_vector_is_zero_not_nan(self):
        a = Tensor([[0.0, 0.0]], requires_grad=True)
        c = T.cosine_rows(a, Tensor([[1.0, 2.0]]))
        assert c.item() == 0.0
        T.sum_(c).backward()
        assert np.isfinite(a.grad).all()

    def test_sigmoid_is_stable_for_large_inputs(self):
        out = T.sigmoid(Tensor([-800.0, 0.0, 800.0])).data
        np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])

    def test_dropout_eval_is_identity(self, rng):
        x = Tensor(rng.standard_normal((4, 5)))
        assert T.dropout(x, 0.5, train=False) is x

    def test_dropout_train_scales_survivors(self, rng):
        x = Tensor(np.ones((200, 50)))
        out = T.dropout(x, 0.25, train=True, rng=np.random.default_rng(0)).data
        assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
        assert abs((out == 0).mean() - 0.25) < 0.02

    def test_dropout_gradient_uses_mask(self):
        x = Tensor(np.ones((3, 3)), requires_grad=True)
        out = T.dropout(x, 0.5, train=True, rng=np.random.default_rng(3))
        T.sum_(out).backward()
        np.testing.assert_array_equal(x.grad, out.data)

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=5),
                      elements=st.floats(-10, 10)))
    def test_reshape_round_trip(self, arr):
        t = T.reshape(T.reshape(Tensor(arr), (arr.size,)), arr.shape)
        np.testing.assert_array_equal(t.data, arr)


class TestBackward:
    def test_sum_gives_ones(self, rng):
        w = Tensor(rng.standard_normal(5), requires_grad=True)
        T.sum_(w).backward()
        np.testing.assert_array_equal(w.grad, np.ones(5))

    def test_square_gives_twice(self, rng):
        w = Tensor(rng.standard_normal(5), requires_grad=True)
        T.sum_(T.mul(w, w)).backward()
        np.testing.assert_allclose(w.grad, 2 * w.data)

    def test_shared_subexpression_accumulates(self):
        w = Tensor([2.0], requires_grad=True)
        y = T.mul(w, w)
        T.sum_(T.add(y, y)).backward()
        np.testing.assert_allclose(w.grad, [8.0])

    def test_non_scalar_loss_rejected(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            T.mul(w, w).backward()

    def test_second_backward_rejected(self):
        w = Tensor(np.ones(3), requires_grad=True)
        loss = T.sum_(T.mul(w, w))
        loss.backward()
        with pytest.raises(ContractError):
            loss.backward()

    def test_topological_order(self, rng):
        w = Tensor(rng.standard_normal(3), requires_grad=True)
        a = T.exp(w)
        b = T.mul(a, w)
        loss = T.sum_(T.add(b, a))
        order = T.tape(loss)
        pos = {id(n): i for i, n in enumerate(order)}
        for node in order:
            for p in node._parents:
                if p.requires_grad:
                    assert pos[id(p)] < pos[id(node)]

    def test_no_grad_records_nothing(self):
        w = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            out = T.sum_(T.mul(w, w))
        assert not out.requires_grad and out.is_leaf

    def test_deep_chain_does_not_recurse(self):
        w = Tensor([1.0], requires_grad=True)
        x = w
        for _ in range(5000):
            x = T.scale(x, 1.0)
        T.sum_(x).backward()
        assert w.grad[0] == 1.0


class TestAdam:
    def test_zero_grads_leave_params(self):
        p = np.array([1.0, -2.0])
        adam_step([p], [np.zeros(2)], AdamState(), lr=0.1)
        np.testing.assert_array_equal(p, [1.0, -2.0])

    def test_first_step_closed_form(self):
        g = np.array([0.5, -3.0, 1e-3])
        p = np.zeros(3)
        adam_step([p], [g.copy()], AdamState(), lr=0.01)
        # bias-corrected first step: m_hat = g, v_hat = g^2
        np.testing.assert_allclose(p, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)

    def test_none_grad_skipped(self):
        p = np.ones(2)
        adam_step([p], [None], AdamState(), lr=0.1)
        np.testing.assert_array_equal(p, np.ones(2))

    def test_converges_on_quadratic(self):
        # Adam with a constant step hovers at about lr around the optimum, so
        # start within 100 * lr of it
        w = Tensor(np.array([0.1, -0.05, 0.03]), requires_grad=True)
        opt = Adam([w], lr=0.005)
        for _ in range(100):
            opt.zero_grad()
            T.sum_(T.mul(w, w)).backward()
            opt.step()
        assert np.abs(w.data).max() < 1e-3

    def test_deterministic(self):
        def go():
            p = np.array([0.3, 0.1])
            st_ = AdamState()
            for k in range(5):
                adam_step([p], [np.array([k, -k]) * 0.1 + p], st_)
            return p

        np.testing.assert_array_equal(go(), go())


class TestFiniteDifferenceHelper:
    def test_helper_on_known_function(self):
        # the oracle itself is checked against an analytic derivative
        x = np.array([0.3, -1.2])
        (g,) = central_difference(lambda a: float(np.sin(a[0]).sum()), [x])
        np.testing.assert_allclose(g, np.cos(x), rtol=1e-7)

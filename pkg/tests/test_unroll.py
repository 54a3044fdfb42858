import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import block_diag_dense, fd_gradient_errors, lista_reference
from pibinn.data import Dataset
from pibinn.errors import DimensionError, NumericalError
from pibinn.linalg import BlockDiagOperator
from pibinn.physics import BlockStructure
from pibinn.unroll import (Activation, FcnNet, LossKind, UnrolledNet, backward,
                           forward, forward_batch, hard_threshold, init_lista, loss,
                           loss_and_grad, per_layer_errors, relu, set_workers, soft_threshold)


def random_net(rng, K, m, n, act="soft", delta=1.0, mode="high_res", lam0=0.02):
    if mode == "one_bit":
        Ws = [lam0 * np.where(rng.random((m, n)) < 0.5, -1.0, 1.0) for _ in range(K)]
        return UnrolledNet(Ws, rng.uniform(0.01, 0.1, K), delta, act,
                           scale=rng.uniform(0.5, 3), quant_mode=mode, lambda0=lam0)
    Ws = [rng.standard_normal((m, n)) * 0.3 for _ in range(K)]
    return UnrolledNet(Ws, rng.uniform(0.01, 0.3, K), delta, act)


class TestActivations:
    def test_soft_examples(self, rng):
        assert soft_threshold(2.0, 1.5) == pytest.approx(0.5)
        assert soft_threshold(-1.0, 1.5) == 0.0
        x = rng.standard_normal(10)
        np.testing.assert_array_equal(soft_threshold(x, 0.0), x)

    def test_hard_examples(self, rng):
        assert hard_threshold(2.0, 1.5) == 2.0
        assert hard_threshold(-1.0, 1.5) == 0.0
        x = rng.standard_normal(10)
        np.testing.assert_array_equal(hard_threshold(x, 0.0), x)

    def test_relu(self):
        np.testing.assert_array_equal(relu([-1.0, 0.0, 2.0]), [0.0, 0.0, 2.0])

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            soft_threshold([1.0], -0.1)
        with pytest.raises(ValueError):
            hard_threshold([1.0], -0.1)

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.floats(0, 3))
    def test_soft_dead_zone_is_exact_zero(self, xs, theta):
        x = np.array(xs)
        out = soft_threshold(x, theta)
        assert np.all(out[np.abs(x) <= theta] == 0.0)
        assert np.all(np.abs(out) <= np.abs(x))


class TestForward:
    def test_zero_weights(self, rng):
        net = UnrolledNet([np.zeros((3, 4))], [0.0])
        tr = forward(net, rng.standard_normal((3, 4)), rng.standard_normal(3))
        np.testing.assert_array_equal(tr.states[-1], np.zeros(4))
        assert len(tr.states) == 2

    def test_identity_gradient_step(self, rng):
        net = UnrolledNet([np.eye(4)], [0.0])
        y = rng.standard_normal(4)
        np.testing.assert_allclose(forward(net, np.eye(4), y).states[-1], y, atol=0)

    @pytest.mark.parametrize("act", ["soft", "hard", "relu"])
    @pytest.mark.parametrize("delta", [1.0, 0.7])
    def test_against_straight_line_reference(self, rng, act, delta):
        A = rng.standard_normal((5, 8))
        net = random_net(rng, 2, 5, 8, act, delta)
        y = rng.standard_normal(5)
        ref = lista_reference(net.weights, net.thetas, A, y, delta, act)
        got = forward(net, A, y).states
        for a, b in zip(got, ref):
            assert np.max(np.abs(a - b)) <= 1e-12

    def test_lista_iteration_matches_reference(self, rng):
        A = rng.standard_normal((10, 20)) / np.sqrt(10)
        net = init_lista(A, 6, theta=0.05)
        y = rng.standard_normal(10)
        ref = lista_reference(net.weights, net.thetas, A, y)
        for a, b in zip(forward(net, A, y).states, ref):
            assert np.max(np.abs(a - b)) <= 1e-12

    def test_scale_linearity(self, rng):
        A = rng.standard_normal((4, 6))
        net = random_net(rng, 3, 4, 6, mode="one_bit")
        c = net.scale
        hr = UnrolledNet([c * W for W in net.weights], net.thetas, net.delta, net.activation)
        Y = rng.standard_normal((7, 4))
        np.testing.assert_array_equal(forward_batch(net, A, Y).states[-1],
                                      forward_batch(hr, A, Y).states[-1])

    def test_batch_equals_single(self, rng):
        A = rng.standard_normal((4, 6))
        net = random_net(rng, 3, 4, 6)
        Y = rng.standard_normal((5, 4))
        batch = forward_batch(net, A, Y).states[-1]
        for i in range(5):
            np.testing.assert_allclose(forward(net, A, Y[i]).states[-1], batch[i], atol=1e-14)

    def test_nonfinite_reports_layer(self, rng):
        A = rng.standard_normal((3, 3))
        net = UnrolledNet([np.full((3, 3), 1e200)] * 3, [0.0] * 3)
        with np.errstate(all="ignore"), pytest.raises(NumericalError) as info:
            forward(net, A, np.full(3, 1e200))
        assert info.value.layer is not None

    def test_dimension_mismatch(self, rng):
        net = random_net(rng, 1, 3, 4)
        with pytest.raises(DimensionError):
            forward(net, rng.standard_normal((3, 4)), np.ones(5))
        with pytest.raises(DimensionError):
            forward(net, rng.standard_normal((3, 5)), np.ones(3))

    @pytest.mark.parametrize("tied", [True, False])
    def test_block_forward_matches_materialized(self, rng, tied):
        s = BlockStructure(3, 2, 4)
        blocks = rng.standard_normal((3, 2, 4))
        op = BlockDiagOperator.from_blocks(blocks)
        net = init_lista(op, 3, 0.05, structure=s, tied=tied)
        for W in net.weights:
            W += 0.1 * rng.standard_normal(W.shape)
        dense_net = net.materialize()
        Y = rng.standard_normal((6, 6))
        a = forward_batch(net, op, Y).states
        b = forward_batch(dense_net, block_diag_dense(list(blocks)), Y).states
        for x, z in zip(a, b):
            assert np.max(np.abs(x - z)) <= 1e-10


class TestInvariants:
    def test_one_bit_invariant(self):
        with pytest.raises(ValueError):
            UnrolledNet([np.array([[0.02, 0.01]])], [0.0], quant_mode="one_bit")
        UnrolledNet([np.array([[0.02, -0.02]])], [0.0], quant_mode="one_bit")

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            UnrolledNet([np.eye(2)], [-0.1])
        with pytest.raises(ValueError):
            UnrolledNet([np.eye(2)], [0.1], delta=0.0)
        with pytest.raises(DimensionError):
            UnrolledNet([np.eye(2), np.eye(2)], [0.1])
        with pytest.raises(ValueError):
            UnrolledNet([], [])

    def test_structured_shape_checked(self):
        with pytest.raises(DimensionError):
            UnrolledNet([np.ones((2, 3))], [0.1], structure=BlockStructure(2, 3, 3))


class TestLoss:
    def test_examples(self, rng):
        x = rng.standard_normal(5)
        assert loss(x, x) == 0.0
        assert loss([1, 0], [0, 0], "squared") == 1.0
        assert loss([1, 0], [0, 0], "norm") == 1.0

    def test_vs_sum(self, rng):
        a, b = rng.standard_normal(7), rng.standard_normal(7)
        ref = sum((ai - bi) ** 2 for ai, bi in zip(a, b))
        assert loss(a, b) == pytest.approx(ref, rel=1e-14)
        assert loss(a, b, LossKind.NORM) == pytest.approx(np.sqrt(ref), rel=1e-14)


class TestBackward:
    def test_zero_net_gradient(self, rng):
        A, y, xo = rng.standard_normal((3, 4)), rng.standard_normal(3), rng.standard_normal(4)
        net = UnrolledNet([np.zeros((3, 4))], [0.0])
        g = backward(net, A, y, xo, forward(net, A, y))
        # x1 = act(W^T y): at W = 0 the ST derivative is 0 on the closed dead zone
        np.testing.assert_array_equal(g.dW[0], 0.0)
        net.weights[0][:] = 1e-3
        errs, n, _ = fd_gradient_errors(net, A, y[None], xo[None], h=1e-7)
        assert n > 0 and errs.max() <= 1e-6

    def test_dead_zone_gives_zero(self, rng):
        A = rng.standard_normal((3, 4))
        net = UnrolledNet([rng.standard_normal((3, 4)) * 0.01], [100.0])
        y, xo = rng.standard_normal(3), rng.standard_normal(4)
        g = backward(net, A, y, xo, forward(net, A, y))
        assert not np.any(g.dW[0]) and g.dtheta[0] == 0.0 and g.dscale == 0.0

    @pytest.mark.parametrize("act", ["soft", "hard", "relu"])
    @pytest.mark.parametrize("mode", ["high_res", "one_bit"])
    @pytest.mark.parametrize("kind", ["squared", "norm"])
    def test_finite_differences(self, rng, act, mode, kind):
        A = rng.standard_normal((6, 9)) / np.sqrt(6)
        net = random_net(rng, 3, 6, 9, act, 0.9, mode)
        Y, X = rng.standard_normal((4, 6)), rng.standard_normal((4, 9))
        errs, n, skipped = fd_gradient_errors(net, A, Y, X, kind)
        assert n > skipped
        assert errs.max() <= 1e-5

    def test_stale_trace(self, rng):
        A = rng.standard_normal((3, 4))
        net = random_net(rng, 2, 3, 4)
        other = random_net(rng, 3, 3, 4)
        y, xo = rng.standard_normal(3), rng.standard_normal(4)
        with pytest.raises(DimensionError):
            backward(net, A, y, xo, forward(other, A, y))

    def test_workers_match_single(self, rng):
        A = rng.standard_normal((5, 8))
        net = random_net(rng, 3, 5, 8)
        Y, X = rng.standard_normal((40, 5)), rng.standard_normal((40, 8))
        v1, g1 = loss_and_grad(net, A, Y, X)
        try:
            set_workers(3)
            v3, g3 = loss_and_grad(net, A, Y, X)
            v3b, g3b = loss_and_grad(net, A, Y, X)
        finally:
            set_workers(1)
        assert v3 == pytest.approx(v1, rel=1e-12)
        for a, b in zip(g1.dW, g3.dW):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)
        for a, b in zip(g3.dW, g3b.dW):
            np.testing.assert_array_equal(a, b)

    def test_block_gradient_vs_fd(self, rng):
        s = BlockStructure(2, 3, 4)
        op = BlockDiagOperator.repeated(rng.standard_normal((3, 4)), 2)
        net = init_lista(op, 2, 0.05, structure=s)
        Y, X = rng.standard_normal((5, 6)), rng.standard_normal((5, 8))
        errs, n, _ = fd_gradient_errors(net, op, Y, X)
        assert n > 0 and errs.max() <= 1e-5


class TestPerLayer:
    def test_perfect_and_zero(self, rng):
        A = np.eye(4)
        X = rng.standard_normal((3, 4))
        ds = Dataset(A, X.copy(), X, [np.arange(4)] * 3)
        perfect = UnrolledNet([np.eye(4)] * 2, [0.0, 0.0])
        assert np.all(per_layer_errors(perfect, ds) == -np.inf)
        zero = UnrolledNet([np.zeros((4, 4))] * 2, [0.0, 0.0])
        np.testing.assert_allclose(per_layer_errors(zero, ds), 0.0, atol=1e-12)

    def test_vs_recomputation(self, rng):
        A = rng.standard_normal((4, 6))
        net = random_net(rng, 2, 4, 6)
        X = rng.standard_normal((5, 6))
        ds = Dataset(A, X @ A.T, X, [np.arange(6)] * 5)
        curve = per_layer_errors(net, ds)
        for k in range(2):
            ratios = []
            for i in range(5):
                xk = lista_reference(net.weights, net.thetas, A, ds.Y[i])[k + 1]
                ratios.append(np.sum((xk - X[i]) ** 2) / np.sum(X[i] ** 2))
            assert curve[k] == pytest.approx(10 * np.log10(np.mean(ratios)), abs=1e-10)

    def test_empty_dataset(self):
        ds = Dataset(np.eye(2), np.zeros((0, 2)), np.zeros((0, 2)), [])
        with pytest.raises(ValueError):
            per_layer_errors(UnrolledNet([np.eye(2)], [0.0]), ds)


class TestFcn:
    def test_shapes_and_gradient(self, rng):
        net = FcnNet.init(4, 6, 3, Activation.SOFT, 0.05, seed=1)
        assert [W.shape for W in net.weights] == [(4, 6), (6, 6), (6, 6)]
        Y, X = rng.standard_normal((5, 4)), rng.standard_normal((5, 6))
        _, g = net.loss_and_grad(Y, X)
        h = 1e-6
        for k in range(3):
            for idx in [(0, 0), (1, 2), (3, 5)]:
                W = net.weights[k]
                old = W[idx]
                W[idx] = old + h
                lp = np.mean(np.sum((net.predict(Y) - X) ** 2, axis=1))
                W[idx] = old - h
                lm = np.mean(np.sum((net.predict(Y) - X) ** 2, axis=1))
                W[idx] = old
                assert g.dW[k][idx] == pytest.approx((lp - lm) / (2 * h), rel=1e-4, abs=1e-8)

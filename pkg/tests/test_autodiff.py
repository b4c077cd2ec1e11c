import numpy as np
import pytest

from contrareg.autodiff import (
    Parameter,
    Tensor,
    finite_diff_check,
    matmul,
    pairwise_dist,
    relu,
    segment_mean,
    take_rows,
    zero_grads,
)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
        assert np.array_equal(out.data, [[3.0], [4.0]])

    def test_hand_arithmetic(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data[0, 0] == 11.0

    def test_matches_naive_loop(self, rng):
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((3, 2))
        out = matmul(Tensor(a), Tensor(b))
        assert np.max(np.abs(out.data - naive_matmul(a, b))) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_backward_formulas(self, rng):
        a = Parameter(rng.standard_normal((3, 4)), "a")
        b = Parameter(rng.standard_normal((4, 2)), "b")
        out = matmul(a, b)
        g = rng.standard_normal(out.shape)
        out.backward(g)
        assert np.allclose(a.grad, g @ b.data.T)
        assert np.allclose(b.grad, a.data.T @ g)


class TestRelu:
    def test_elementwise(self):
        out = relu(Tensor([[-1.0, 0.0, 2.0]]))
        assert np.array_equal(out.data, [[0.0, 0.0, 2.0]])

    def test_all_positive_identity(self, rng):
        x = np.abs(rng.standard_normal((3, 3))) + 0.1
        assert np.array_equal(relu(Tensor(x)).data, x)

    def test_gradient_zero_at_zero(self):
        p = Parameter(np.array([[-1.0, 0.0, 2.0]]), "p")
        relu(p).sum().backward()
        assert np.array_equal(p.grad, [[0.0, 0.0, 1.0]])

    def test_finite_difference(self, rng):
        p = Parameter(rng.standard_normal((4, 3)) + 0.5, "p")
        err = finite_diff_check(lambda: (relu(p) * relu(p)).sum(), [p])
        assert err < 1e-6


class TestPooling:
    def test_single_frame_identity(self):
        x = Tensor([[1.0, 2.0, 3.0]])
        assert np.array_equal(x.mean_rows().data, [[1.0, 2.0, 3.0]])

    def test_two_frames(self):
        x = Tensor([[1.0, 3.0], [3.0, 1.0]])
        assert np.array_equal(x.mean_rows().data, [[2.0, 2.0]])

    def test_empty_sequence_error(self):
        with pytest.raises(ValueError, match="empty"):
            Tensor(np.zeros((0, 3))).mean_rows()

    def test_gradient_matches_finite_differences(self, rng):
        p = Parameter(rng.standard_normal((5, 3)), "p")
        err = finite_diff_check(lambda: (p.mean_rows() * p.mean_rows()).sum(), [p])
        assert err < 1e-6

    def test_segment_mean_distributes_gradient(self, rng):
        p = Parameter(rng.standard_normal((5, 2)), "p")
        out = segment_mean(p, [2, 3])
        assert np.allclose(out.data[0], p.data[:2].mean(axis=0))
        assert np.allclose(out.data[1], p.data[2:].mean(axis=0))
        out.sum().backward()
        expected = np.concatenate([np.full((2, 2), 0.5), np.full((3, 2), 1 / 3)])
        assert np.allclose(p.grad, expected)

    def test_segment_mean_validates_lengths(self):
        with pytest.raises(ValueError):
            segment_mean(Tensor(np.zeros((4, 2))), [2, 3])
        with pytest.raises(ValueError):
            segment_mean(Tensor(np.zeros((4, 2))), [4, 0])


class TestPairwiseDist:
    def test_identical_rows_zero(self):
        z = Tensor(np.ones((3, 4)))
        d = pairwise_dist(z)
        assert np.array_equal(d.data, np.zeros((3, 3)))

    def test_three_four_five(self):
        d = pairwise_dist(Tensor([[0.0, 0.0], [3.0, 4.0]]))
        assert d.data[0, 1] == pytest.approx(5.0, abs=1e-12)
        assert d.data[1, 0] == pytest.approx(5.0, abs=1e-12)
        assert d.data[0, 0] == 0.0

    @pytest.mark.parametrize("squared", [False, True])
    def test_matches_pair_loop(self, rng, squared):
        z = rng.standard_normal((5, 3))
        d = pairwise_dist(Tensor(z), squared=squared).data
        for i in range(5):
            for j in range(5):
                ref = np.sum((z[i] - z[j]) ** 2)
                if not squared:
                    ref = np.sqrt(ref)
                assert abs(d[i, j] - ref) < 1e-12

    def test_symmetry_and_diagonal(self, rng):
        d = pairwise_dist(Tensor(rng.standard_normal((6, 4)))).data
        assert np.array_equal(d, d.T)
        assert np.array_equal(np.diag(d), np.zeros(6))

    @pytest.mark.parametrize("squared", [False, True])
    def test_gradient(self, rng, squared):
        p = Parameter(rng.standard_normal((4, 3)), "z")
        w = rng.standard_normal((4, 4))
        err = finite_diff_check(lambda: (pairwise_dist(p, squared=squared) * w).sum(), [p])
        assert err < 1e-6

    def test_gradient_defined_zero_at_coincident_points(self):
        p = Parameter(np.ones((3, 2)), "z")
        pairwise_dist(p).sum().backward()
        assert np.array_equal(p.grad, np.zeros((3, 2)))
        assert np.all(np.isfinite(p.grad))


class TestTakeRows:
    def test_gather_scatter(self, rng):
        p = Parameter(rng.standard_normal((4, 2)), "p")
        out = take_rows(p, np.array([0, 0, 3]))
        assert np.array_equal(out.data, p.data[[0, 0, 3]])
        out.sum().backward()
        assert np.array_equal(p.grad, np.array([[2.0, 2.0], [0, 0], [0, 0], [1.0, 1.0]]))


class TestFiniteDiffCheck:
    def test_quadratic(self):
        w = Parameter(np.array([[1.0], [2.0]]), "w")
        err = finite_diff_check(lambda: (w * w).sum(), [w], step=1e-6)
        assert err < 1e-8
        assert np.allclose(w.grad, [[2.0], [4.0]])

    def test_rejects_bad_step(self):
        w = Parameter(np.ones((1, 1)), "w")
        with pytest.raises(ValueError):
            finite_diff_check(lambda: (w * w).sum(), [w], step=0.0)

    def test_rejects_non_finite_loss(self):
        w = Parameter(np.array([[np.inf]]), "w")
        with pytest.raises(ValueError, match="finite"):
            finite_diff_check(lambda: (w * w).sum(), [w])


class TestGraphProperties:
    def test_recorded_computations_match_finite_differences(self):
        # composite expression using most primitives, over many seeds
        for seed in range(50):
            r = np.random.default_rng(seed)
            a = Parameter(r.standard_normal((3, 4)), "a")
            b = Parameter(r.standard_normal((4, 2)), "b")
            c = Parameter(r.standard_normal((1, 2)), "c")

            def fn():
                h = relu(matmul(a, b) + c)
                d = pairwise_dist(h)
                return (d * d).sum() + (h.mean_rows() * h.mean_rows()).sum()

            assert finite_diff_check(fn, [a, b, c]) < 1e-4

    def test_gradients_accumulate_and_zero(self, rng):
        p = Parameter(rng.standard_normal((2, 2)), "p")
        (p * p).sum().backward()
        g1 = p.grad.copy()
        (p * p).sum().backward()
        assert np.allclose(p.grad, 2 * g1)
        zero_grads([p])
        assert np.array_equal(p.grad, np.zeros((2, 2)))

    def test_forward_backward_bit_deterministic(self, rng):
        a = Parameter(rng.standard_normal((4, 3)), "a")
        b = Parameter(rng.standard_normal((3, 3)), "b")

        def run():
            zero_grads([a, b])
            d = pairwise_dist(relu(matmul(a, b)))
            d.sum().backward()
            return a.grad.copy(), b.grad.copy()

        ga1, gb1 = run()
        ga2, gb2 = run()
        assert np.array_equal(ga1, ga2)
        assert np.array_equal(gb1, gb2)

    def test_constant_inputs_record_nothing(self, rng):
        x = Tensor(rng.standard_normal((3, 3)))
        out = relu(matmul(x, Tensor(np.eye(3))))
        assert not out.requires_grad
        assert out._parents == ()

    def test_reused_node_gets_both_contributions(self):
        p = Parameter(np.array([[2.0]]), "p")
        q = p * p  # used twice downstream
        (q + q).sum().backward()
        assert p.grad[0, 0] == pytest.approx(8.0)

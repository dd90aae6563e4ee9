import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepcat import autodiff as ad
from deepcat.autodiff import Parameter, Tensor, grad_check
from deepcat.errors import DimensionError, DomainError, UsageError


def leaf(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


# --- matmul -------------------------------------------------------------------


def test_matmul_gradient_example():
    a, b = leaf([[1.0, 1.0]]), Tensor([[2.0], [3.0]])
    with ad.Tape():
        ad.backward((a @ b).sum())
    np.testing.assert_array_equal(a.grad, [[2.0, 3.0]])


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_rejects_non_2d():
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


# --- elementwise ------------------------------------------------------------------


def test_square_gradient():
    x = leaf([3.0])
    with ad.Tape():
        ad.backward(x.square().sum())
    np.testing.assert_array_equal(x.grad, [6.0])


def test_backward_sum_of_squares():
    x = leaf([1.0, 2.0])
    with ad.Tape():
        ad.backward(ad.square(x).sum())
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_broadcast_gradients_are_reduced_to_operand_shape():
    a, b = leaf(np.ones((3, 4))), leaf(np.arange(4.0))
    with ad.Tape():
        ad.backward((a * b).sum())
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))
    np.testing.assert_array_equal(a.grad, np.tile(np.arange(4.0), (3, 1)))


def test_log_of_non_positive_is_domain_error():
    with pytest.raises(DomainError):
        ad.log(Tensor([1.0, 0.0]))


def test_relu_subgradient_at_zero_is_zero():
    x = leaf([-1.0, 0.0, 2.0])
    with ad.Tape():
        ad.backward(ad.relu(x).sum())
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_relu_gradcheck_away_from_kink():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, 20)
    x[np.abs(x) < 1e-2] = 0.5
    report = grad_check(lambda t: (ad.relu(t) * t).sum(), Tensor(x))
    assert report.max_rel_error < 1e-5


def test_elementwise_dispatch_and_unknown_kind():
    np.testing.assert_array_equal(ad.elementwise("exp", Tensor([0.0])).data, [1.0])
    with pytest.raises(ValueError):
        ad.elementwise("tanh", Tensor([0.0]))


def test_division_only_by_scalar():
    np.testing.assert_array_equal((Tensor([2.0, 4.0]) / 2).data, [1.0, 2.0])
    with pytest.raises(TypeError):
        Tensor([1.0]) / Tensor([2.0])


# --- conv2d -------------------------------------------------------------------------


def test_conv2d_matches_direct_sum():
    rng = np.random.default_rng(0)
    x, k = rng.normal(size=(2, 3, 6, 7)), rng.normal(size=(4, 3, 3, 2))
    out = ad.conv2d(Tensor(x), Tensor(k), stride=2).data
    ho, wo = (6 - 3) // 2 + 1, (7 - 2) // 2 + 1
    expected = np.zeros((2, 4, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = x[:, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 2]
            expected[:, :, i, j] = np.einsum("bchw,ochw->bo", patch, k)
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)


def test_conv2d_kernel_gradcheck():
    rng = np.random.default_rng(1)
    x = Tensor(rng.uniform(-1, 1, (2, 2, 5, 5)))
    k = Tensor(rng.uniform(-1, 1, (3, 2, 2, 2)))
    report = grad_check(lambda kk: ad.conv2d(x, kk, 1).square().sum(), k)
    assert report.max_rel_error < 1e-5


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        ad.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 2, 2))))


def test_conv2d_kernel_larger_than_input():
    with pytest.raises(DimensionError):
        ad.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


# --- reductions -----------------------------------------------------------------------


def test_max_ties_route_to_first_index():
    x = leaf([1.0, 5.0, 5.0])
    with ad.Tape():
        ad.backward(x.max())
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_reduce_axis_out_of_range():
    with pytest.raises(DimensionError):
        ad.reduce("sum", Tensor(np.ones((2, 3))), axis=2)


def test_mean_gradient_is_uniform():
    x = leaf(np.ones((2, 5)))
    with ad.Tape():
        ad.backward(x.mean())
    np.testing.assert_array_equal(x.grad, np.full((2, 5), 0.1))


# --- logsumexp ------------------------------------------------------------------------------


def test_logsumexp_example():
    got = ad.logsumexp(Tensor([[0.0, -4.0]]), axis=1).data[0]
    np.testing.assert_allclose(got, np.log1p(np.exp(-4.0)), rtol=0, atol=1e-15)
    np.testing.assert_allclose(got, 0.01814992791780978, rtol=1e-12)


def test_logsumexp_duplicated_term():
    np.testing.assert_allclose(ad.logsumexp(Tensor([[3.5, 3.5]]), axis=1).data, [3.5 + np.log(2.0)], rtol=1e-15)


def test_logsumexp_large_negative_is_finite():
    got = ad.logsumexp(Tensor([[-1e6, -1e6 - 1]]), axis=1).data[0]
    assert np.isfinite(got)
    np.testing.assert_allclose(got, -1e6 + np.log1p(np.exp(-1.0)), rtol=1e-15)


def test_logsumexp_ignores_negative_infinity():
    got = ad.logsumexp(Tensor([[0.0, -np.inf]]), axis=1).data
    np.testing.assert_array_equal(got, [0.0])


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (3, 4), elements=st.floats(-50, 50)),
    st.floats(-1e3, 1e3),
)
def test_logsumexp_shift_identity(x, c):
    base = ad.logsumexp(Tensor(x), axis=1).data
    shifted = ad.logsumexp(Tensor(x + c), axis=1).data
    np.testing.assert_allclose(shifted, base + c, rtol=0, atol=1e-10)


# --- tape semantics ----------------------------------------------------------------------


def test_second_backward_on_same_tape_is_rejected():
    x = leaf([1.0, 2.0])
    with ad.Tape():
        loss = x.square().sum()
        ad.backward(loss)
        with pytest.raises(UsageError):
            ad.backward(loss)


def test_backward_requires_scalar():
    x = leaf([1.0, 2.0])
    with ad.Tape():
        with pytest.raises(DimensionError):
            ad.backward(x.square())


def test_backward_on_leaf_is_usage_error():
    with pytest.raises(UsageError):
        ad.backward(Tensor(1.0))


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with ad.Tape() as tape:
        with ad.no_grad():
            x.square().sum()
        assert len(tape) == 0


def test_replay_reproduces_outputs_bit_exactly():
    rng = np.random.default_rng(4)
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    with ad.Tape() as tape:
        out = ad.logsumexp(ad.relu(a @ b).exp(), axis=1).sum()
    recorded = [node.output.data.copy() for node in tape.nodes]
    replayed = tape.replay()
    assert len(replayed) == len(recorded)
    for r, s in zip(replayed, recorded):
        np.testing.assert_array_equal(r, s)
    assert out.data == replayed[-1]


def test_nodes_are_topologically_ordered():
    a = leaf([1.0, 2.0])
    with ad.Tape() as tape:
        (a.exp() * a).sum()
    produced = set()
    for node in tape.nodes:
        for inp in node.inputs:
            assert inp._node is None or id(inp) in produced
        produced.add(id(node.output))


def test_forward_is_deterministic():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 3))

    def run():
        with ad.no_grad():
            return ad.logsumexp(Tensor(x) @ Tensor(x.T), axis=0).data

    np.testing.assert_array_equal(run(), run())


def test_tapes_are_thread_local():
    errors = []

    def worker(seed):
        try:
            x = leaf(np.full(3, float(seed)))
            with ad.Tape():
                ad.backward(x.square().sum())
            np.testing.assert_array_equal(x.grad, np.full(3, 2.0 * seed))
        except Exception as exc:  # pragma: no cover - surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(s,)) for s in range(1, 5)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors


def test_frozen_parameter_gets_no_gradient():
    p = Parameter(np.ones(2), "p", frozen=True)
    q = Parameter(np.ones(2), "q")
    with ad.Tape():
        ad.backward((p * q).sum())
    assert p.grad is None
    np.testing.assert_array_equal(q.grad, [1.0, 1.0])


# --- grad_check -----------------------------------------------------------------------


def test_grad_check_sum_of_squares_is_tight():
    x = Tensor(np.random.default_rng(0).uniform(-1, 1, 8))
    report = grad_check(lambda t: t.square().sum(), x)
    assert report.max_rel_error < 1e-7


def test_grad_check_detects_wrong_rule(monkeypatch):
    monkeypatch.setattr(ad, "_square_backward", lambda g, out, x: (g * 3.0 * x,))
    report = grad_check(lambda t: t.square().sum(), Tensor(np.array([0.3, -0.7])))
    assert not report.passed


def test_grad_check_rejects_bad_step():
    with pytest.raises(DomainError):
        grad_check(lambda t: t.sum(), Tensor([1.0]), step=0.0)


def test_grad_check_leaves_input_unchanged():
    values = np.array([0.1, 0.2, 0.3])
    x = Tensor(values.copy())
    grad_check(lambda t: t.exp().sum(), x)
    np.testing.assert_array_equal(x.data, values)

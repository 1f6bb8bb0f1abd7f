"""Gradient and contract checks for the reverse-mode engine."""

import numpy as np
import pytest

from nesua import autodiff as ad
from nesua.errors import ContractError, ShapeError

from helpers import check_grad


def test_add_subtract_multiply_gradients():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(4, 3))
        check_grad(lambda t: ad.sum_all(ad.add(t[0], t[1])), [a, b])
        check_grad(lambda t: ad.sum_all(ad.subtract(t[0], t[1])), [a, b])
        check_grad(lambda t: ad.sum_all(ad.multiply(t[0], t[1])), [a, b])


def test_broadcast_gradients():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(5, 4))
    row = rng.normal(size=(1, 4))
    col = rng.normal(size=(5, 1))
    vec = rng.normal(size=(4,))
    check_grad(lambda t: ad.sum_all(ad.add(t[0], t[1])), [a, row])
    check_grad(lambda t: ad.sum_all(ad.multiply(t[0], t[1])), [a, col])
    check_grad(lambda t: ad.sum_all(ad.add(t[0], t[1])), [a, vec])
    # outer-product style broadcast (K,1) + (1,K)
    u = rng.normal(size=(6, 1))
    v = rng.normal(size=(1, 6))
    check_grad(lambda t: ad.sum_all(ad.multiply(ad.add(t[0], t[1]), ad.add(t[0], t[1]))), [u, v])


def test_shape_mismatch_raises():
    a = ad.constant(np.zeros((3, 4)))
    b = ad.constant(np.zeros((2, 5)))
    with pytest.raises(ShapeError):
        ad.add(a, b)
    with pytest.raises(ShapeError):
        ad.matmul(a, b)
    with pytest.raises(ShapeError):
        ad.transpose(ad.constant(np.zeros(3)))


def test_matmul_gradients():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = rng.normal(size=(4, 6))
        b = rng.normal(size=(6, 3))
        check_grad(lambda t: ad.sum_all(ad.matmul(t[0], t[1])), [a, b])
    # matrix @ vector
    a = rng.normal(size=(5, 7))
    v = rng.normal(size=(7,))
    check_grad(lambda t: ad.sum_all(ad.matmul(t[0], t[1])), [a, v])


def test_transpose_reshape_slice_concat_gradients():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 6))
    check_grad(lambda t: ad.sum_all(ad.multiply(ad.transpose(t[0]), ad.transpose(t[0]))), [a])
    check_grad(lambda t: ad.sum_all(ad.multiply(ad.reshape(t[0], (2, 12)), ad.reshape(t[0], (2, 12)))), [a])
    check_grad(lambda t: ad.trace_of_gram(ad.slice_rows(t[0], 1, 3)), [a])
    b = rng.normal(size=(4, 2))
    check_grad(lambda t: ad.trace_of_gram(ad.concat([t[0], t[1]], axis=1)), [a, b])
    check_grad(lambda t: ad.trace_of_gram(ad.concat([t[0], t[1]], axis=0)), [a, a.copy()])


def test_nonlinearity_gradients():
    rng = np.random.default_rng(4)
    for _ in range(20):
        # keep probes away from the kinks so finite differences are clean
        x = rng.normal(size=(5, 4))
        x[np.abs(x) < 0.05] += 0.1
        check_grad(lambda t: ad.sum_all(ad.relu(t[0])), [x])
        check_grad(lambda t: ad.sum_all(ad.leaky_relu(t[0], 0.2)), [x])
        check_grad(lambda t: ad.sum_all(ad.exp(ad.scale(t[0], 0.3))), [x])
        xc = x.copy()
        xc[np.abs(xc - 1.0) < 0.05] += 0.1
        xc[np.abs(xc + 1.0) < 0.05] += 0.1
        check_grad(lambda t: ad.trace_of_gram(ad.clamp(t[0], -1.0, 1.0)), [xc])


def test_leaky_relu_values():
    x = ad.constant(np.array([-2.0, -0.5, 0.0, 0.5, 2.0]))
    out = ad.leaky_relu(x, 0.2)
    np.testing.assert_allclose(out.values, [-0.4, -0.1, 0.0, 0.5, 2.0])


def test_masked_softmax_values_and_gradient():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 5))
    mask = rng.integers(0, 2, size=(4, 5)).astype(float)
    mask[:, 0] = 1.0  # every row keeps one entry
    out = ad.row_softmax_masked(ad.constant(x), mask)
    assert np.all(out.values[mask == 0] == 0.0)
    np.testing.assert_allclose(out.values.sum(axis=1), np.ones(4), rtol=1e-12)
    check_grad(lambda t: ad.trace_of_gram(ad.row_softmax_masked(t[0], mask)), [x])


def test_masked_softmax_masked_entries_get_zero_gradient():
    rng = np.random.default_rng(6)
    x = ad.parameter(rng.normal(size=(3, 4)))
    mask = np.array([[1, 0, 1, 0], [1, 1, 0, 0], [0, 0, 0, 1]], dtype=float)
    loss = ad.trace_of_gram(ad.row_softmax_masked(x, mask))
    ad.backward(loss)
    assert np.all(x.grad[mask == 0] == 0.0)


def test_masked_softmax_empty_row_rejected():
    x = ad.constant(np.zeros((2, 3)))
    mask = np.array([[1, 1, 1], [0, 0, 0]], dtype=float)
    with pytest.raises(ContractError):
        ad.row_softmax_masked(x, mask)


def test_masked_softmax_is_stable_at_large_scores():
    x = ad.constant(np.array([[1e4, 1e4 - 2.0, -1e4]]))
    out = ad.row_softmax_masked(x, np.ones((1, 3)))
    assert np.isfinite(out.values).all()
    np.testing.assert_allclose(out.values.sum(), 1.0, rtol=1e-12)


def test_reduction_gradients():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.normal(size=(4, 5))
        check_grad(lambda t: ad.sum_all(t[0]), [x])
        check_grad(lambda t: ad.sum_all(ad.multiply(ad.row_sum(t[0]), ad.row_sum(t[0]))), [x])
        check_grad(lambda t: ad.trace_of_gram(t[0]), [x])
        check_grad(lambda t: ad.l2_norm(t[0]), [x])


def test_l2_norm_value():
    x = ad.constant(np.array([3.0, 4.0]))
    assert ad.l2_norm(x).item() == pytest.approx(5.0)


def test_complement_product_gate_values():
    s = np.array([[0.0, 1.0, 0.5], [0.0, 0.3, 0.5]])
    out = ad.complement_product_gate(ad.constant(s))
    np.testing.assert_allclose(out.values, [0.0, 1.0, 0.75])


def test_complement_product_gate_gradient():
    rng = np.random.default_rng(8)
    for _ in range(20):
        s = rng.uniform(0.05, 0.95, size=(5, 3))
        check_grad(lambda t: ad.sum_all(ad.complement_product_gate(t[0])), [s])
    # exact leave-one-out products even with zero factors present
    s = rng.uniform(0.05, 0.95, size=(4, 3))
    s[1, 0] = 1.0  # makes (1 - s) vanish for that factor
    check_grad(lambda t: ad.sum_all(ad.complement_product_gate(t[0])), [s])


def test_gradient_accumulates_when_input_is_reused():
    x = ad.parameter(np.array([2.0, 3.0]))
    loss = ad.sum_all(ad.multiply(x, x))  # d/dx sum(x^2) = 2x
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, [4.0, 6.0])


def test_backward_accumulates_across_calls_until_zeroed():
    x = ad.parameter(np.array([1.0, -1.0]))
    for _ in range(2):
        ad.backward(ad.sum_all(ad.multiply(x, x)))
    np.testing.assert_allclose(x.grad, [4.0, -4.0])
    ad.zero_grad([x])
    assert x.grad is None


def test_backward_requires_scalar_loss():
    x = ad.parameter(np.zeros((2, 2)))
    with pytest.raises(ContractError):
        ad.backward(ad.add(x, x))


def test_constants_collect_no_gradient():
    c = ad.constant(np.ones(3))
    x = ad.parameter(np.ones(3))
    ad.backward(ad.sum_all(ad.multiply(c, x)))
    assert c.grad is None
    np.testing.assert_allclose(x.grad, np.ones(3))


def test_deep_chain_does_not_overflow_recursion():
    x = ad.parameter(np.array(1.0))
    y = x
    for _ in range(5000):
        y = ad.scale(y, 1.0)
    ad.backward(y)
    assert x.grad == pytest.approx(1.0)


def test_adam_first_step_moves_by_lr():
    # with a single constant gradient the bias-corrected step is exactly lr
    p = ad.parameter(np.array([1.0, 2.0, 3.0]))
    state = ad.AdamState.for_params([p], lr=0.1)
    g = np.array([0.5, -2.0, 1e-12])
    ad.adam_step([p], [g], state)
    expected = np.array([1.0, 2.0, 3.0]) - 0.1 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.values, expected, rtol=1e-9)
    assert state.step == 1


def test_adam_constant_gradient_converges_on_quadratic():
    p = ad.parameter(np.array([5.0]))
    state = ad.AdamState.for_params([p], lr=0.05)
    for _ in range(4000):
        g = 2.0 * p.values  # d/dp p^2
        ad.adam_step([p], [g], state)
    assert abs(p.values[0]) < 1e-3


def test_adam_state_round_trips_through_dict():
    p = ad.parameter(np.array([1.0, -1.0]))
    state = ad.AdamState.for_params([p], lr=0.01)
    ad.adam_step([p], [np.array([0.3, -0.7])], state)
    clone = ad.AdamState.from_dict(state.to_dict())
    assert clone.step == state.step
    np.testing.assert_allclose(clone.m[0], state.m[0])
    np.testing.assert_allclose(clone.v[0], state.v[0])

    # both continue identically
    p2 = ad.parameter(p.values.copy())
    g = np.array([-0.2, 0.4])
    ad.adam_step([p], [g], state)
    ad.adam_step([p2], [g], clone)
    np.testing.assert_allclose(p.values, p2.values)


def test_adam_skips_missing_gradients():
    p = ad.parameter(np.array([1.0]))
    q = ad.parameter(np.array([2.0]))
    state = ad.AdamState.for_params([p, q], lr=0.1)
    ad.adam_step([p, q], [np.array([1.0]), None], state)
    assert q.values[0] == 2.0
    assert p.values[0] != 1.0


def test_full_pipeline_gradient_composition():
    # a miniature of the real forward pass: linear map, attention-style
    # masked softmax, gate, and norm terms combined into one scalar
    rng = np.random.default_rng(9)
    h = rng.normal(size=(5, 4))
    w = rng.normal(size=(3, 4))
    q = rng.normal(size=(3, 2))
    mask = np.ones((5, 5))
    mask[0, 3] = mask[3, 0] = 0.0

    def build(t):
        hw = ad.matmul(t[0], ad.transpose(t[1]))
        scores = ad.matmul(hw, ad.matmul(ad.transpose(hw), ad.constant(np.ones((5, 5)) / 5)))
        att = ad.row_softmax_masked(scores, mask)
        mixed = ad.relu(ad.matmul(att, hw))
        s = ad.row_softmax_masked(ad.matmul(mixed, t[2]), np.ones((5, 2)))
        gate = ad.complement_product_gate(s)
        return ad.add(ad.sum_all(gate), ad.add(ad.trace_of_gram(s), ad.l2_norm(ad.row_sum(s))))

    check_grad(build, [h, w, q], rtol=2e-4)

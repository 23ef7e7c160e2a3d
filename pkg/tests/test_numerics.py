import numpy as np
import pytest

from avseg import numerics as nm
from avseg.errors import ContractError, DomainError, ShapeError

from conftest import central_diff, max_rel_err


def test_cosine_similarity_values():
    assert nm.cosine_similarity([1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0, abs=1e-12)
    assert nm.cosine_similarity([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0, abs=1e-12)
    assert nm.cosine_similarity([1.0, 1.0], [1.0, 0.0]) == pytest.approx(0.70710678, abs=1e-8)


def test_cosine_similarity_rejects_zero_norm():
    with pytest.raises(DomainError):
        nm.cosine_similarity([0.0, 0.0], [1.0, 0.0])


def test_cosine_similarity_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        nm.cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


def test_softmax_symmetry():
    out = nm.softmax(nm.tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)


def test_softmax_rows_sum_to_one(rng):
    x = nm.tensor(rng.normal(0, 5, (6, 9)))
    s = nm.softmax(x).data.sum(axis=-1)
    assert np.max(np.abs(s - 1.0)) < 1e-12


def test_matmul_identity(rng):
    a = rng.normal(size=(2, 5))
    out = nm.matmul(nm.tensor(np.eye(2)), nm.tensor(a))
    np.testing.assert_array_equal(out.data, np.eye(2) @ a)


def test_gelu_zero_fixed_point():
    assert nm.gelu(nm.tensor([0.0])).data[0] == 0.0


def test_square_gradient_analytic():
    x = nm.tensor([3.0], requires_grad=True)
    y = nm.reduce_sum(nm.square(x))
    nm.backward(y)
    assert x.grad[0] == pytest.approx(6.0, abs=1e-12)


def test_backward_rejects_nonscalar_root():
    x = nm.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        nm.backward(nm.square(x))


def test_unused_leaf_has_zero_adjoint():
    x = nm.tensor([1.0, 2.0], requires_grad=True)
    c = nm.tensor([4.0], requires_grad=True)
    y = nm.reduce_sum(nm.mul(c, 1.0))
    nm.backward(y)
    np.testing.assert_array_equal(nm.adjoint(x), np.zeros(2))
    np.testing.assert_array_equal(nm.adjoint(c), np.ones(1))


def test_cosine_similarity_gradients_match_fd(rng):
    # tighter tolerance here: the map is smooth and O(1)-conditioned
    u = rng.normal(size=5)
    v = rng.normal(size=5)

    def forward():
        return nm.cosine_similarity(u, v)

    tu = nm.tensor(u, requires_grad=True)
    tv = nm.tensor(v, requires_grad=True)
    nm.backward(nm.cosine_similarity(tu, tv))
    fd_u, fd_v = central_diff(forward, [u, v])
    assert max_rel_err(tu.grad, fd_u) < 1e-6
    assert max_rel_err(tv.grad, fd_v) < 1e-6


def _composition(a, b, c, e):
    """One scalar touching every primitive in the engine."""
    ta = nm.as_tensor(a)
    tb = nm.as_tensor(b)
    tc = nm.as_tensor(c)
    te = nm.as_tensor(e)
    t = nm.matmul(ta, tb)
    t = nm.add(t, tc)
    t = nm.sub(t, nm.mul(tc, te))
    t = nm.layer_norm(t)
    s = nm.softmax(t)
    g = nm.gelu(nm.add(t, s))
    q = nm.div(nm.square(g), nm.add(nm.sqrt(nm.add(nm.square(tc), 1.0)), 0.5))
    r = nm.relu(nm.sub(q, 0.1))
    p = nm.mean_pool(r, axis=-1)
    z = nm.reduce_sum(nm.mul(p, p))
    flat = nm.reshape(ta, (ta.data.size,))
    flat_t = nm.reshape(nm.transpose(ta), (ta.data.size,))
    w = nm.cosine_similarity(flat, flat_t)
    return nm.add(z, nm.mul(w, 0.5))


def test_all_primitives_gradients_match_fd_over_seeds():
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        a = r.normal(size=(3, 4))
        b = r.normal(size=(4, 5))
        c = r.normal(size=(3, 5))
        e = r.normal(size=(1, 5))

        def forward():
            return float(_composition(a, b, c, e).data)

        leaves = [nm.tensor(x, requires_grad=True) for x in (a, b, c, e)]
        nm.backward(_composition(*leaves))
        fd = central_diff(forward, [a, b, c, e])
        for leaf, f in zip(leaves, fd):
            worst = max(worst, max_rel_err(nm.adjoint(leaf), f))
    assert worst < 1e-4


def test_repeated_evaluation_is_bit_identical(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 5))
    c = rng.normal(size=(3, 5))
    e = rng.normal(size=(1, 5))
    first = _composition(a, b, c, e).data.copy()
    second = _composition(a, b, c, e).data.copy()
    assert first.tobytes() == second.tobytes()


def test_gradient_accumulates_over_reuse():
    x = nm.tensor([2.0], requires_grad=True)
    y = nm.reduce_sum(nm.mul(x, x))  # same leaf twice
    nm.backward(y)
    assert x.grad[0] == pytest.approx(4.0, abs=1e-12)


def test_div_guard():
    with pytest.raises(DomainError):
        nm.div(nm.tensor([1.0]), nm.tensor([1e-13]))


def test_sqrt_domain_and_zero_subgradient():
    with pytest.raises(DomainError):
        nm.sqrt(nm.tensor([-1.0]))
    x = nm.tensor([0.0, 4.0], requires_grad=True)
    nm.backward(nm.reduce_sum(nm.sqrt(x)))
    np.testing.assert_allclose(x.grad, [0.0, 0.25], atol=1e-12)


def test_shape_errors():
    with pytest.raises(ShapeError):
        nm.add(nm.tensor([1.0, 2.0]), nm.tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ShapeError):
        nm.matmul(nm.tensor(np.zeros((2, 3))), nm.tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        nm.transpose(nm.tensor([1.0]))


def test_broadcast_gradients_match_fd(rng):
    a = rng.normal(size=(3, 1))
    b = rng.normal(size=(1, 4))

    def forward():
        return float(nm.reduce_sum(nm.square(nm.add(a, b))).data)

    ta = nm.tensor(a, requires_grad=True)
    tb = nm.tensor(b, requires_grad=True)
    nm.backward(nm.reduce_sum(nm.square(nm.add(ta, tb))))
    fd_a, fd_b = central_diff(forward, [a, b])
    assert max_rel_err(ta.grad, fd_a) < 1e-6
    assert max_rel_err(tb.grad, fd_b) < 1e-6


def test_batched_matmul_gradients_match_fd(rng):
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 5))  # broadcast over the batch axis

    def forward():
        return float(nm.reduce_sum(nm.square(nm.matmul(a, b))).data)

    ta = nm.tensor(a, requires_grad=True)
    tb = nm.tensor(b, requires_grad=True)
    nm.backward(nm.reduce_sum(nm.square(nm.matmul(ta, tb))))
    fd_a, fd_b = central_diff(forward, [a, b])
    assert max_rel_err(ta.grad, fd_a) < 1e-6
    assert max_rel_err(tb.grad, fd_b) < 1e-6


def test_layer_norm_statistics(rng):
    x = nm.tensor(rng.normal(3.0, 2.0, (5, 8)))
    out = nm.layer_norm(x).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)  # eps-limited

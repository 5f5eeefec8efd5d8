import math

import numpy as np
import pytest

from gnssfilter import tape
from gnssfilter.errors import GraphCycle, NonScalarSeed, NotSPD
from gnssfilter.tape import Var, backward, leaf


def numeric_grad(fn, x, step=1e-6):
    """Central finite differences of a scalar function of one array."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * step)
    return g


def check_gradient(fn, x, rtol=1e-6, step=1e-6):
    """fn maps a leaf Var to a scalar Var; compare backward vs central FD."""
    v = leaf(np.array(x, dtype=float))
    out = fn(v)
    backward(out)
    analytic = v.grad
    numeric = numeric_grad(lambda arr: float(fn(Var(arr)).value), np.array(x, float),
                           step=step)
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=1e-8)


RNG = np.random.default_rng(42)


def test_softplus_values_and_grad():
    v = leaf(np.array([0.0, 30.0, -30.0, 800.0, -800.0]))
    out = tape.softplus(v)
    assert out.value[0] == pytest.approx(math.log(2.0), abs=1e-12)
    assert out.value[3] == pytest.approx(800.0)
    assert out.value[4] == pytest.approx(0.0, abs=1e-12)
    backward(tape.reduce_sum(out))
    assert v.grad[0] == pytest.approx(0.5, abs=1e-12)


def test_grad_of_squared_norm():
    x = RNG.normal(size=(4, 3))
    v = leaf(x)
    out = tape.reduce_sum(v * v)
    backward(out)
    np.testing.assert_allclose(v.grad, 2.0 * x, rtol=1e-12)


@pytest.mark.parametrize("op", [
    lambda v: tape.reduce_sum(tape.relu(v)),
    lambda v: tape.reduce_sum(tape.softplus(v)),
    lambda v: tape.reduce_sum(tape.exp(v * 0.3)),
    lambda v: tape.reduce_sum(tape.sqrt(tape.softplus(v) + 1.0)),
    lambda v: tape.reduce_sum(tape.reciprocal(tape.softplus(v) + 2.0)),
    lambda v: tape.reduce_sum(tape.log(tape.softplus(v) + 1.5)),
    lambda v: tape.reduce_mean(v * v, axis=1)[0],
    lambda v: tape.reduce_sum(tape.softmax(v, axis=-1) * np.arange(12.0).reshape(3, 4)),
    lambda v: tape.reduce_sum(tape.transpose(v) @ v),
    lambda v: tape.reduce_sum(v[1:, :2] * 3.0),
    lambda v: tape.reduce_sum(tape.reshape(v, (12,))[2:7]),
    lambda v: tape.reduce_sum(tape.concat([v, v * 2.0], axis=0)),
    lambda v: tape.reduce_sum(tape.stack([v, v * v], axis=0)[1]),
])
def test_primitive_gradients(op):
    x = RNG.normal(size=(3, 4)) + 0.1
    check_gradient(op, x)


def test_matmul_gradients_2d():
    a = RNG.normal(size=(3, 4))
    b = RNG.normal(size=(4, 2))
    va, vb = leaf(a), leaf(b)
    out = tape.reduce_sum(va @ vb)
    backward(out)
    np.testing.assert_allclose(va.grad, numeric_grad(
        lambda arr: float((arr @ b).sum()), a), rtol=1e-6)
    np.testing.assert_allclose(vb.grad, numeric_grad(
        lambda arr: float((a @ arr).sum()), b), rtol=1e-6)


def test_matmul_gradients_batched():
    a = RNG.normal(size=(2, 4, 3, 5))
    b = RNG.normal(size=(2, 4, 5, 2))
    w = RNG.normal(size=(2, 4, 3, 2))
    va, vb = leaf(a), leaf(b)
    out = tape.reduce_sum((va @ vb) * w)
    backward(out)
    np.testing.assert_allclose(va.grad, numeric_grad(
        lambda arr: float(((arr @ b) * w).sum()), a), rtol=1e-5, atol=1e-9)
    np.testing.assert_allclose(vb.grad, numeric_grad(
        lambda arr: float(((a @ arr) * w).sum()), b), rtol=1e-5, atol=1e-9)


def test_matmul_gradients_vector_cases():
    a = RNG.normal(size=5)
    m = RNG.normal(size=(5, 3))
    v = RNG.normal(size=3)
    va, vm, vv = leaf(a), leaf(m), leaf(v)
    out = (va @ vm) @ vv
    backward(out)
    np.testing.assert_allclose(va.grad, numeric_grad(
        lambda arr: float((arr @ m) @ v), a), rtol=1e-6)
    np.testing.assert_allclose(vm.grad, numeric_grad(
        lambda arr: float((a @ arr) @ v), m), rtol=1e-6)
    np.testing.assert_allclose(vv.grad, numeric_grad(
        lambda arr: float((a @ m) @ arr), v), rtol=1e-6)


def test_matmul_gradient_matrix_times_vector():
    # matrix @ vector with a non-scalar downstream: per-component gradients
    m = RNG.normal(size=(4, 6))
    v = RNG.normal(size=6)
    w = RNG.normal(size=4)
    vm, vv = leaf(m), leaf(v)
    out = tape.reduce_sum((vm @ vv) * w)
    backward(out)
    np.testing.assert_allclose(vv.grad, m.T @ w, rtol=1e-12)
    np.testing.assert_allclose(vm.grad, np.outer(w, v), rtol=1e-12)
    np.testing.assert_allclose(vv.grad, numeric_grad(
        lambda arr: float(((m @ arr) * w).sum()), v), rtol=1e-6)


def test_broadcasting_add_mul():
    a = RNG.normal(size=(3, 4))
    b = RNG.normal(size=(4,))
    va, vb = leaf(a), leaf(b)
    out = tape.reduce_sum((va + vb) * vb)
    backward(out)
    np.testing.assert_allclose(vb.grad, numeric_grad(
        lambda arr: float(((a + arr) * arr).sum()), b), rtol=1e-6)
    np.testing.assert_allclose(va.grad, numeric_grad(
        lambda arr: float(((arr + b) * b).sum()), a), rtol=1e-6)


def test_diag_embed_gradient():
    v = RNG.normal(size=6)
    w = RNG.normal(size=(6, 6))
    vv = leaf(v)
    out = tape.reduce_sum(tape.diag_embed(vv) * w)
    backward(out)
    np.testing.assert_allclose(vv.grad, np.diag(w), rtol=1e-12)


def test_powv_gradient():
    a = np.abs(RNG.normal(size=5)) + 0.5
    b = RNG.normal(size=5)
    va, vb = leaf(a), leaf(b)
    out = tape.reduce_sum(tape.powv(va, vb))
    backward(out)
    np.testing.assert_allclose(va.grad, numeric_grad(
        lambda arr: float((arr ** b).sum()), a), rtol=1e-5)
    np.testing.assert_allclose(vb.grad, numeric_grad(
        lambda arr: float((a ** arr).sum()), b), rtol=1e-5)


def spd_matrix(rng, n):
    m = rng.normal(size=(n, n))
    return m @ m.T + n * np.eye(n)


def test_spd_solve_values_and_gradient():
    rng = np.random.default_rng(3)
    a = spd_matrix(rng, 5)
    b = rng.normal(size=5)
    w = rng.normal(size=5)
    va, vb = leaf(a), leaf(b)
    x = tape.spd_solve(va, vb)
    np.testing.assert_allclose(x.value, np.linalg.solve(a, b), rtol=1e-10)
    backward(tape.reduce_sum(x * w))
    np.testing.assert_allclose(vb.grad, numeric_grad(
        lambda arr: float(np.linalg.solve(a, arr) @ w), b), rtol=1e-6)
    np.testing.assert_allclose(va.grad, numeric_grad(
        lambda arr: float(np.linalg.solve(arr, b) @ w), a), rtol=1e-5, atol=1e-9)


def test_spd_solve_matrix_rhs_gradient():
    rng = np.random.default_rng(4)
    a = spd_matrix(rng, 4)
    b = rng.normal(size=(4, 3))
    w = rng.normal(size=(4, 3))
    va, vb = leaf(a), leaf(b)
    x = tape.spd_solve(va, vb)
    backward(tape.reduce_sum(x * w))
    np.testing.assert_allclose(va.grad, numeric_grad(
        lambda arr: float((np.linalg.solve(arr, b) * w).sum()), a),
        rtol=1e-5, atol=1e-9)
    np.testing.assert_allclose(vb.grad, numeric_grad(
        lambda arr: float((np.linalg.solve(a, arr) * w).sum()), b), rtol=1e-6)


def test_spd_solve_adjoint_identity():
    # d(A^-1) = -A^-1 dA A^-1: gradient wrt A of w^T A^-1 b is -(A^-1 w)(A^-1 b)^T
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = spd_matrix(rng, 6)
        b = rng.normal(size=6)
        w = rng.normal(size=6)
        va = leaf(a)
        x = tape.spd_solve(va, Var(b))
        backward(tape.reduce_sum(x * w))
        expected = -np.outer(np.linalg.solve(a, w), np.linalg.solve(a, b))
        np.testing.assert_allclose(va.grad, expected, rtol=1e-8, atol=1e-8)


def test_spd_solve_rejects_non_spd():
    a = np.array([[1.0, 2.0], [2.0, 1.0]])   # indefinite
    with pytest.raises(NotSPD):
        tape.spd_solve(Var(a), Var(np.ones(2)))


def test_max_stopgrad_blocks_gradient():
    v = leaf(np.array([1.0, 5.0, 3.0]))
    m = tape.max_stopgrad(v)
    assert float(m.value) == 5.0
    assert not m.requires_grad
    out = tape.reduce_sum(v * m)
    backward(out)
    np.testing.assert_allclose(v.grad, [5.0, 5.0, 5.0])


def test_constant_subgraphs_prune():
    c = Var(np.ones(3))
    out = tape.reduce_sum(c * 2.0 + 1.0)
    assert not out.requires_grad
    assert out.parents == ()


def test_non_scalar_seed_raises():
    v = leaf(np.ones(3))
    with pytest.raises(NonScalarSeed):
        backward(v * 2.0)


def test_cycle_detection():
    v = leaf(np.ones(2))
    out = v * 2.0
    out.parents = (out,)   # deliberately corrupt the graph
    with pytest.raises(GraphCycle):
        backward(tape.reduce_sum(out))


def test_gradient_accumulates_over_reuse():
    v = leaf(np.array([2.0]))
    out = v * v + v * 3.0
    backward(tape.reduce_sum(out))
    assert v.grad[0] == pytest.approx(2 * 2.0 + 3.0)

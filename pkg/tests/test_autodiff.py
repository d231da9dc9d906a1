import numpy as np
import pytest

from locostack.autodiff import Adam, Tensor, concat, maximum, minimum, stack, where
from util import numerical_grad, rel_err


def check_grad(build, x0, tol=1e-6, h=1e-6):
    """build(Tensor) -> scalar Tensor; compares backward() to central FD."""
    t = Tensor(x0.copy(), requires_grad=True)
    out = build(t)
    out.backward()
    num = numerical_grad(lambda x: float(build(Tensor(x)).data), x0, h=h)
    assert rel_err(t.grad, num) < tol, (t.grad, num)


def test_arithmetic_grads():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(4, 3))
    check_grad(lambda t: ((t * 2.0 + 1.0) ** 3 / (t * t + 2.0)).sum(), x0)


def test_broadcasting_grads():
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=(5, 1, 3))
    w = rng.normal(size=(4, 3))
    check_grad(lambda t: (t * w).sum(), x0)
    check_grad(lambda t: (t + w).mean(), x0)


def test_matmul_grad():
    rng = np.random.default_rng(2)
    a0 = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    check_grad(lambda t: (t @ b).sum(), a0)
    check_grad(lambda t: ((Tensor(a0) @ t) ** 2).sum(), rng.normal(size=(4, 2)))


def test_elementwise_function_grads():
    rng = np.random.default_rng(3)
    x0 = rng.uniform(0.5, 2.0, size=(6,))
    check_grad(lambda t: t.exp().sum(), x0)
    check_grad(lambda t: t.log().sum(), x0)
    check_grad(lambda t: t.sqrt().sum(), x0)
    check_grad(lambda t: t.tanh().sum(), x0)
    check_grad(lambda t: t.sin().sum(), x0)
    check_grad(lambda t: t.cos().sum(), x0)


def test_reduction_axis_grads():
    rng = np.random.default_rng(4)
    x0 = rng.normal(size=(3, 4, 2))
    check_grad(lambda t: (t.sum(axis=1) ** 2).sum(), x0)
    check_grad(lambda t: (t.mean(axis=(0, 2)) ** 2).sum(), x0)
    check_grad(lambda t: (t.sum(axis=0, keepdims=True) * 3.0).sum(), x0)


def test_shape_op_grads():
    rng = np.random.default_rng(5)
    x0 = rng.normal(size=(4, 6))
    check_grad(lambda t: (t.reshape(2, 12) ** 2).sum(), x0)
    check_grad(lambda t: (t[:, 1:4] ** 2).sum(), x0)
    check_grad(lambda t: (concat([t, t * 2.0], axis=1) ** 2).sum(), x0)
    check_grad(lambda t: (stack([t[0], t[1]], axis=0) ** 2).sum(), x0)


def test_max_min_where_clip_grads():
    rng = np.random.default_rng(6)
    x0 = rng.normal(size=(20,)) * 2.0
    # keep away from the kink so finite differences are valid
    x0[np.abs(x0) < 0.1] += 0.3
    check_grad(lambda t: maximum(t, 0.0).sum(), x0)
    check_grad(lambda t: minimum(t, 0.5).sum(), x0) if np.all(np.abs(x0 - 0.5) > 0.05) else None
    check_grad(lambda t: where(x0 > 0, t * 3.0, t * -1.0).sum(), x0)
    x1 = rng.normal(size=(10,))
    x1[np.abs(np.abs(x1) - 1.0) < 0.05] = 0.5
    check_grad(lambda t: (t.clip(-1.0, 1.0) ** 2).sum(), x1)


def test_relu_subgradient_zero_at_zero():
    t = Tensor(np.array([0.0, -1.0, 2.0]), requires_grad=True)
    maximum(t - 0.0, 0.0).sum().backward()
    assert np.array_equal(t.grad, [0.0, 0.0, 1.0])


def test_reused_node_accumulates():
    t = Tensor(np.array([3.0]), requires_grad=True)
    y = t * t + t * 2.0  # dy/dt = 2t + 2 = 8
    y.sum().backward()
    assert np.allclose(t.grad, [8.0])


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (t * 2.0).backward()


def test_adam_reduces_quadratic():
    target = np.array([1.0, -2.0, 0.5])
    p = Tensor(np.zeros(3), requires_grad=True)
    opt = Adam([p], lr=0.1)
    first = None
    for _ in range(200):
        opt.zero_grad()
        loss = ((p - target) ** 2).sum()
        if first is None:
            first = float(loss.data)
        loss.backward()
        opt.step()
    assert float(loss.data) < 1e-4 * first
    assert np.allclose(p.data, target, atol=1e-2)

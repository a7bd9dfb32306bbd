import numpy as np
import pytest

from puresample import nn
from puresample.rng import Rng


def _loss(net, x, up):
    return float(np.dot(up, nn.forward(net, x)))


def _fd_param_grads(net, x, up, h=1e-6):
    grads = []
    for p in net.params():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gf = g.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            fp = _loss(net, x, up)
            flat[j] = old - h
            fm = _loss(net, x, up)
            flat[j] = old
            gf[j] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def test_zero_net_outputs_zero():
    net = nn.zero_net((4, 8, 2))
    assert np.all(nn.forward(net, np.ones(4)) == 0.0)


def test_identity_single_layer():
    net = nn.zero_net((3, 3), activation="identity")
    net.weights[0] = np.eye(3)
    x = np.array([0.3, -1.2, 2.0])
    assert np.allclose(nn.forward(net, x), x)


def test_linear_layer_weight_perturbation():
    net = nn.zero_net((2, 1), activation="identity")
    x = np.array([2.0, 3.0])
    base = nn.forward(net, x)[0]
    net.weights[0][0, 0] += 0.5
    assert np.isclose(nn.forward(net, x)[0] - base, 0.5 * x[0])


def test_backward_matches_finite_differences():
    rng = Rng(21)
    worst = 0.0
    for trial in range(5):
        net = nn.make_net(rng, (4, 6, 6, 6, 2))
        x = rng.normal(4)
        up = rng.normal(2)
        grads, _ = nn.backward(net, x, up)
        fd = _fd_param_grads(net, x, up, h=1e-5)
        for g, f in zip(grads, fd):
            denom = np.maximum(np.abs(f), 1e-6)
            worst = max(worst, float(np.max(np.abs(g - f) / denom)))
    assert worst < 1e-3


def test_backward_zero_upstream():
    rng = Rng(22)
    net = nn.make_net(rng, (3, 5, 2))
    grads, ingrad = nn.backward(net, rng.normal(3), np.zeros(2))
    assert all(np.all(g == 0) for g in grads)
    assert np.all(ingrad == 0)


def test_backward_identity_net_input_grad():
    net = nn.zero_net((2, 2), activation="identity")
    net.weights[0] = np.eye(2)
    up = np.array([0.7, -0.4])
    _, ingrad = nn.backward(net, np.array([1.0, 2.0]), up)
    assert np.allclose(ingrad, up)


def test_backward_shape_mismatch():
    rng = Rng(23)
    net = nn.make_net(rng, (3, 4, 2))
    with pytest.raises(ValueError):
        nn.backward(net, np.zeros(5), np.zeros(2))
    with pytest.raises(ValueError):
        nn.forward(net, np.zeros((2, 4)))


def test_input_jacobian_matches_fd():
    rng = Rng(24)
    for _ in range(5):
        net = nn.make_net(rng, (5, 8, 8, 2))
        x = rng.normal(5)
        jac = nn.input_jacobian_2d(net, x)
        h = 1e-6
        fd = np.zeros((2, 2))
        for j in range(2):
            old = x[j]
            x[j] = old + h
            fp = nn.forward(net, x)
            x[j] = old - h
            fm = nn.forward(net, x)
            x[j] = old
            fd[:, j] = (fp - fm) / (2 * h)
        assert np.abs(jac - fd).max() < 1e-4


def test_input_jacobian_constant_net():
    net = nn.zero_net((4, 6, 2))
    net.biases[-1][:] = 3.0
    assert np.all(nn.input_jacobian_2d(net, np.ones(4)) == 0.0)


def test_input_jacobian_linear_net():
    net = nn.zero_net((4, 2), activation="identity")
    a = np.array([[1.5, -0.5], [0.25, 2.0]])
    net.weights[0][:, :2] = a
    jac = nn.input_jacobian_2d(net, np.zeros(4))
    assert np.allclose(jac, a)


def test_jacobian_splits_x_and_cond():
    rng = Rng(25)
    net = nn.make_net(rng, (6, 8, 2))
    full = rng.normal(6)
    j1 = nn.input_jacobian_2d(net, full)
    j2 = nn.input_jacobian_2d(net, full[:2], full[2:])
    assert np.allclose(j1, j2)


def test_adam_first_step_is_signed_lr():
    p = [np.array([1.0, -2.0])]
    st = nn.make_adam(p, lr=0.1)
    nn.adam_step(st, p, [np.array([0.3, -0.7])])
    assert np.allclose(p[0], [1.0 - 0.1, -2.0 + 0.1], atol=1e-6)


def test_adam_zero_grad_keeps_params():
    p = [np.array([1.0, 2.0])]
    st = nn.make_adam(p, lr=0.1)
    nn.adam_step(st, p, [np.zeros(2)])
    assert np.allclose(p[0], [1.0, 2.0])


def test_adam_quadratic_bowl():
    p = [np.array([1.0])]
    st = nn.make_adam(p, lr=0.01)
    for _ in range(500):
        nn.adam_step(st, p, [2.0 * p[0]])
    assert abs(p[0][0]) < 1e-2


def test_adam_rejects_nonfinite():
    p = [np.array([1.0])]
    st = nn.make_adam(p, lr=0.01)
    with pytest.raises(ValueError):
        nn.adam_step(st, p, [np.array([np.nan])])


def test_forward_pure():
    rng = Rng(26)
    net = nn.make_net(rng, (4, 16, 16, 2))
    x = rng.normal((8, 4))
    a = nn.forward(net, x)
    b = nn.forward(net, x)
    assert np.array_equal(a, b)


def test_activation_smooth():
    # C1 continuity probe around zero
    z = np.linspace(-1e-3, 1e-3, 201)
    s = 1.0 / (1.0 + np.exp(-z))
    g = nn._silu_grad_from_sig(z, s)
    assert np.abs(np.diff(g)).max() < 1e-4


def test_residual_net_gradcheck():
    rng = Rng(27)
    net = nn.make_net(rng, (4, 8, 8, 8, 2), residual=(False, True, False))
    x = rng.normal(4)
    up = rng.normal(2)
    grads, _ = nn.backward(net, x, up)
    fd = _fd_param_grads(net, x, up, h=1e-5)
    for g, f in zip(grads, fd):
        denom = np.maximum(np.abs(f), 1e-6)
        assert np.max(np.abs(g - f) / denom) < 1e-3

import numpy as np
import pytest

from puresample import nn
from puresample.flow import (
    FlowModel,
    FlowTrainConfig,
    NeuralTexture,
    ReflowConfig,
    build_cond,
    cfm_loss,
    flow_pdf,
    flow_sample,
    make_flow_model,
    reflow_distill,
    train_flow,
    tv_loss,
)
from puresample.geom import gaussian2d_pdf, gaussian2d_sample
from puresample.rng import Rng

COND = build_cond(np.array([0.0, 0.0, 1.0]), np.array([0]))


def zero_model(steps=50):
    return FlowModel(net=nn.zero_net((9, 8, 2)), steps=steps)


def linear_model(steps=1):
    # velocity u(x) = x through an identity-activation single layer
    w = np.zeros((2, 9))
    w[0, 0] = 1.0
    w[1, 1] = 1.0
    net = nn.DenseNet(sizes=(9, 2), weights=[w], biases=[np.zeros(2)], activation="identity")
    return FlowModel(net=net, steps=steps)


# -- cfm loss -----------------------------------------------------------------------


def test_cfm_loss_zero_when_net_matches_target():
    # coupled x0 == x1 makes the target velocity zero; a zero net fits it
    m = zero_model()
    x1 = gaussian2d_sample(Rng(1), 256)
    cond = np.broadcast_to(COND, (256, COND.shape[1]))
    loss, grads, _ = cfm_loss(m, x1, cond, Rng(2), x0=x1)
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads)


def test_cfm_loss_expectation_zero_net():
    # zero net, gaussian target: E||X1 - X0||^2 = 2 + 2 = 4
    m = zero_model()
    rng = Rng(3)
    x1 = gaussian2d_sample(rng, 100_000)
    cond = np.broadcast_to(COND, (x1.shape[0], COND.shape[1]))
    loss, _, _ = cfm_loss(m, x1, cond, Rng(4))
    assert abs(loss - 4.0) < 0.05


def test_cfm_loss_gradient_matches_fd():
    rng = Rng(5)
    model = make_flow_model(rng, hidden=6, n_hidden=2)
    x1 = gaussian2d_sample(rng, 32)
    cond = np.broadcast_to(COND, (32, COND.shape[1]))

    def loss_at(seed):
        return cfm_loss(model, x1, cond, Rng(seed))[0]

    base_seed = 77
    _, grads, _ = cfm_loss(model, x1, cond, Rng(base_seed))
    h = 1e-6
    params = model.net.params()
    checked = 0
    for pi, p in enumerate(params):
        flat = p.reshape(-1)
        for j in range(0, flat.size, max(1, flat.size // 3)):
            old = flat[j]
            flat[j] = old + h
            fp = loss_at(base_seed)
            flat[j] = old - h
            fm = loss_at(base_seed)
            flat[j] = old
            fd = (fp - fm) / (2 * h)
            g = grads[pi].reshape(-1)[j]
            assert abs(fd - g) <= 1e-3 * max(1.0, abs(fd))
            checked += 1
    assert checked > 10


def test_cfm_loss_empty_batch():
    with pytest.raises(ValueError):
        cfm_loss(zero_model(), np.zeros((0, 2)), np.zeros((0, 6)), Rng(1))


# -- tv loss -----------------------------------------------------------------------


def test_tv_constant_zero():
    t = NeuralTexture(np.full((4, 4, 3), 2.5))
    loss, grad = tv_loss(t)
    assert loss == 0.0
    assert np.all(grad == 0)


def test_tv_2x2_example():
    t = np.array([[0.0, 1.0], [0.0, 1.0]])[:, :, None]
    loss, _ = tv_loss(NeuralTexture(t))
    assert loss == 2.0


def test_tv_homogeneous_scaling():
    rng = Rng(6)
    t = rng.normal((5, 5, 2))
    l1, _ = tv_loss(NeuralTexture(t))
    l2, _ = tv_loss(NeuralTexture(3.0 * t))
    assert np.isclose(l2, 3.0 * l1)


def test_tv_gradient_fd():
    rng = Rng(7)
    t = rng.normal((3, 3, 1))
    _, grad = tv_loss(NeuralTexture(t))
    h = 1e-7
    for i in range(3):
        for j in range(3):
            old = t[i, j, 0]
            t[i, j, 0] = old + h
            lp, _ = tv_loss(NeuralTexture(t))
            t[i, j, 0] = old - h
            lm, _ = tv_loss(NeuralTexture(t))
            t[i, j, 0] = old
            assert abs((lp - lm) / (2 * h) - grad[i, j, 0]) < 1e-5


# -- pdf ---------------------------------------------------------------------------


def test_zero_velocity_pdf_is_base_gaussian():
    m = zero_model()
    val = flow_pdf(m, COND, np.array([[0.0, 0.0]]))[0]
    assert abs(val - 1.0 / (2 * np.pi)) < 1e-9
    val = flow_pdf(m, COND, np.array([[0.5, -0.3]]))[0]
    assert abs(val - gaussian2d_pdf(np.array([0.5, -0.3]))) < 1e-9


def test_pdf_zero_outside_disk():
    m = zero_model()
    assert flow_pdf(m, COND, np.array([[1.2, 0.0]]))[0] == 0.0


def test_linear_map_pdf():
    # u(x) = x, one Euler step of size 1 doubles x; density picks up 1/det(2I)
    m = linear_model(steps=1)
    y = np.array([[0.3, -0.2]])
    got = flow_pdf(m, COND, y)[0]
    want = gaussian2d_pdf(y[0] / 2.0) / 4.0
    assert abs(got - want) < 1e-12


def test_zero_velocity_sampling_matches_base():
    m = zero_model()
    rng = Rng(8)
    pts, pdfs = flow_sample(m, COND, rng, n=2000)
    assert ((pts ** 2).sum(1) <= 1.0).all()
    assert np.allclose(pdfs, gaussian2d_pdf(pts), atol=1e-12)


def test_sample_scalar_form():
    m = zero_model()
    pt, pdf = flow_sample(m, COND, Rng(9))
    assert pt.shape == (2,)
    assert pdf > 0


# -- training (tiny smoke; the full oracle lives in the acceptance suite) -----------


def _tiny_lambertian_dataset(n_wi=24, n_per=300, seed=10):
    from puresample.dataset import generate_homogeneous
    from puresample.microgeo import scene_from_json

    scene = scene_from_json('{"variant":"flat","brdf":{"kind":"lambertian","albedo":[0.8,0.5,0.2]}}')
    return generate_homogeneous(scene, Rng(seed), n_wi=n_wi, n_per_wi=n_per)


def test_train_flow_loss_decreases_and_reproducible():
    ds = _tiny_lambertian_dataset()
    cfg = FlowTrainConfig(epochs=3, batch=4096, hidden=16, n_hidden=2)
    m1, _ = train_flow(ds, cfg, Rng(11))
    m2, _ = train_flow(ds, cfg, Rng(11))
    assert m1.train_log[-1] < m1.train_log[0]
    for a, b in zip(m1.net.params(), m2.net.params()):
        assert np.array_equal(a, b)


def test_train_flow_empty_channel_errors():
    ds = _tiny_lambertian_dataset(n_wi=4, n_per=20)
    ds.accepted[ds.channel == 2] = 0
    with pytest.raises(ValueError, match="channel 2"):
        train_flow(ds, FlowTrainConfig(epochs=1, hidden=8, n_hidden=1), Rng(12))


def test_reflow_initialization_reproduces_teacher():
    rng = Rng(13)
    teacher = make_flow_model(rng, hidden=16, n_hidden=2)
    student = reflow_distill(teacher, ReflowConfig(epochs=0, pairs_per_epoch=8, student_steps=10), Rng(14))
    x = Rng(15).normal((4, 9))
    assert np.array_equal(nn.forward(student.net, x), nn.forward(teacher.net, x))
    assert student.steps == 10


def test_reflow_pair_generation_deterministic():
    teacher = make_flow_model(Rng(16), hidden=8, n_hidden=1)
    cfg = ReflowConfig(epochs=1, pairs_per_epoch=512, batch=256, student_steps=10)
    s1 = reflow_distill(teacher, cfg, Rng(17))
    s2 = reflow_distill(teacher, cfg, Rng(17))
    for a, b in zip(s1.net.params(), s2.net.params()):
        assert np.array_equal(a, b)

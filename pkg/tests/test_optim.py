import numpy as np
import pytest

from ictlab.optim import Moments, ema_update, optimizer_step


def test_matches_torch_radam():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(0)
    grads = rng.standard_normal((40, 5))
    p = torch.zeros(5, dtype=torch.float64, requires_grad=True)
    opt = torch.optim.RAdam([p], lr=1e-3, betas=(0.9, 0.999), eps=1e-8)
    ours, moments = np.zeros(5), Moments.zeros(5)
    for g in grads:
        p.grad = torch.tensor(g)
        opt.step()
        delta, moments = optimizer_step(moments, g, lr=1e-3)
        ours = ours + delta
        np.testing.assert_allclose(ours, p.detach().numpy(), rtol=1e-10, atol=1e-14)
    assert moments.step == 40


def test_first_steps_are_momentum_only():
    # rho_t <= 5 for t <= 5 with beta2 = 0.999, so the step is -lr * m_hat = -lr * g
    delta, m = optimizer_step(Moments.zeros(2), np.array([2.0, -3.0]), lr=0.1)
    np.testing.assert_allclose(delta, [-0.2, 0.3])
    assert m.step == 1


def test_step_must_be_positive():
    with pytest.raises(ValueError):
        optimizer_step(Moments.zeros(1), np.ones(1), step=0)


def test_ema():
    a, b = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    np.testing.assert_allclose(ema_update(a, b, 0.75), [1.5, 2.5])
    c = ema_update(a, b, 0.0)
    np.testing.assert_array_equal(c, b)
    assert c is not b
    for bad in (1.0, -0.1):
        with pytest.raises(ValueError):
            ema_update(a, b, bad)


def test_zero_gradient_gives_zero_update():
    moments = Moments.zeros(3)
    for _ in range(10):
        delta, moments = optimizer_step(moments, np.zeros(3), lr=1e-3)
        assert not np.any(delta)


def test_constant_gradient_update_tends_to_lr():
    g = np.array([3.0, -0.01, 50.0])
    moments = Moments.zeros(3)
    for _ in range(20_000):
        delta, moments = optimizer_step(moments, g, lr=1e-3)
    np.testing.assert_allclose(delta, -1e-3 * np.sign(g), rtol=1e-3)


def test_repeated_ema_converges_geometrically():
    p, e = np.array([1.0, -2.0]), np.zeros(2)
    gaps = []
    for _ in range(50):
        e = ema_update(e, p, 0.9)
        gaps.append(np.abs(e - p).max())
    np.testing.assert_allclose(np.array(gaps[1:]) / gaps[:-1], 0.9, rtol=1e-9)

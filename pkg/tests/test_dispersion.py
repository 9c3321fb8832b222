import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from acerax.dispersion import (
    DispersionSample,
    closed_form_sigma,
    dispersion_grad,
    dispersion_loss,
    loss_parts,
    output_grad,
)
from acerax.nets import AdamState, DenseNet, adam_step, finite_diff_check
from acerax.policy import GaussianHead, PolicyParams, log_density

LOG_2PI = np.log(2.0 * np.pi)


def constant_params(mean, log_std, state_dim=1):
    """Zero-weight nets whose outputs are the given constants."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    log_std = np.atleast_1d(np.asarray(log_std, dtype=np.float64))
    return PolicyParams(
        mean_net=DenseNet([state_dim, 2, mean.size], output_bias=mean),
        log_std_net=DenseNet([state_dim, 2, log_std.size], output_bias=log_std),
    )


def random_params(rng, state_dim=3, action_dim=2):
    return PolicyParams(
        mean_net=DenseNet([state_dim, 5, 4, action_dim], rng=rng),
        log_std_net=DenseNet([state_dim, 4, 3, action_dim], rng=rng, output_bias=-1.0),
    )


def test_loss_at_mode_reduces_to_log_std_term():
    params = constant_params(mean=0.3, log_std=-0.8)
    s = DispersionSample(s=np.zeros(1), a=np.array([0.3]), m=np.array([0.3]))
    for alpha in (0.0, 0.1, 1.0):
        assert dispersion_loss(params, s, alpha) == pytest.approx(
            (1.0 + alpha) * -0.8, rel=1e-14
        )


def test_loss_hand_computed_value():
    # d=1, m-mu=0.2, a-mu=0.5, alpha=0.1, eta=-1.2:
    # loss = (0.5*0.04 + 0.1*0.5*0.25) e^{2.4} + 1.1*(-1.2)
    params = constant_params(mean=0.0, log_std=-1.2)
    s = DispersionSample(s=np.zeros(1), a=np.array([0.5]), m=np.array([0.2]))
    expected = 0.0325 * np.exp(2.4) - 1.32
    got = dispersion_loss(params, s, 0.1)
    assert got == pytest.approx(expected, rel=1e-14)
    assert got == pytest.approx(-0.961746767629148, rel=1e-12)


def test_output_grad_hand_computed_value():
    # d loss / d eta = -[(m-mu)^2 + alpha (a-mu)^2] e^{-2 eta} + (1 + alpha)
    g = output_grad(
        mean=np.zeros(1),
        log_std=np.array([-1.2]),
        a=np.array([0.5]),
        m=np.array([0.2]),
        alpha=0.1,
    )
    expected = -0.065 * np.exp(2.4) + 1.1
    assert g[0] == pytest.approx(expected, rel=1e-14)
    assert g[0] == pytest.approx(0.3834935352582959, rel=1e-12)


def test_output_grad_zero_at_stationary_sigma():
    m_dev, a_dev, alpha = 0.3, 0.7, 0.25
    eta_star = 0.5 * np.log((m_dev**2 + alpha * a_dev**2) / (1.0 + alpha))
    g = output_grad(
        mean=np.zeros(1),
        log_std=np.array([eta_star]),
        a=np.array([a_dev]),
        m=np.array([m_dev]),
        alpha=alpha,
    )
    assert g[0] == pytest.approx(0.0, abs=1e-12)


def test_loss_consistent_with_log_density():
    # loss = -log phi(m) - alpha log phi(a) minus the constant (1+alpha) d/2 log 2pi.
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = int(rng.integers(1, 4))
        params = constant_params(
            mean=rng.standard_normal(d), log_std=rng.uniform(-2, 1, d), state_dim=2
        )
        state = rng.standard_normal(2)
        samp = DispersionSample(
            s=state, a=rng.standard_normal(d), m=rng.standard_normal(d)
        )
        alpha = float(rng.uniform(0, 1))
        h = GaussianHead(
            mean=params.mean_net.forward(state), log_std=params.log_std_net.forward(state)
        )
        expected = (
            -log_density(h, samp.m)
            - alpha * log_density(h, samp.a)
            - (1.0 + alpha) * 0.5 * d * LOG_2PI
        )
        assert dispersion_loss(params, samp, alpha) == pytest.approx(expected, rel=1e-11)


def test_alpha_zero_ignores_action():
    params = constant_params(mean=0.1, log_std=-0.5)
    m = np.array([0.4])
    base = dispersion_loss(params, DispersionSample(np.zeros(1), np.array([0.9]), m), 0.0)
    moved = dispersion_loss(params, DispersionSample(np.zeros(1), np.array([-3.7]), m), 0.0)
    assert base == moved


def test_negative_alpha_rejected():
    params = constant_params(mean=0.0, log_std=0.0)
    samp = DispersionSample(np.zeros(1), np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        dispersion_loss(params, samp, -0.1)
    with pytest.raises(ValueError):
        dispersion_grad(params, samp, -0.1)
    with pytest.raises(ValueError):
        closed_form_sigma(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), -0.1)


def test_loss_monotone_in_mode_deviation():
    params = constant_params(mean=0.0, log_std=-0.5)
    a = np.array([0.2])
    losses = [
        dispersion_loss(params, DispersionSample(np.zeros(1), a, np.array([dev])), 0.1)
        for dev in (0.1, 0.3, 0.6, 1.2)
    ]
    assert all(x < y for x, y in zip(losses, losses[1:]))
    sigmas = [
        closed_form_sigma(np.array([[dev]]), a[None, :], np.zeros((1, 1)), 0.1).sigma[0]
        for dev in (0.1, 0.3, 0.6, 1.2)
    ]
    assert all(x < y for x, y in zip(sigmas, sigmas[1:]))


def test_dispersion_grad_via_bias_only_net():
    # Zero-weight log-std net: the only nonzero gradient entry is the output bias,
    # and it must equal the hand-derived upstream gradient.
    params = constant_params(mean=0.0, log_std=-1.2)
    samp = DispersionSample(s=np.zeros(1), a=np.array([0.5]), m=np.array([0.2]))
    grad = dispersion_grad(params, samp, 0.1)
    bias_slot = params.log_std_net.num_params - 1
    assert grad[bias_slot] == pytest.approx(0.3834935352582959, rel=1e-12)
    others = np.delete(grad, bias_slot)
    assert np.array_equal(others, np.zeros_like(others))


def test_dispersion_grad_matches_finite_differences():
    rng = np.random.default_rng(1)
    params = random_params(rng)
    samp = DispersionSample(
        s=rng.standard_normal(3), a=rng.standard_normal(2), m=rng.standard_normal(2)
    )

    def loss(p):
        params.log_std_net.flat[:] = p
        return dispersion_loss(params, samp, 0.1)

    def grad(p):
        params.log_std_net.flat[:] = p
        return dispersion_grad(params, samp, 0.1)

    report = finite_diff_check(loss, grad, params.log_std_net.flat.copy(), tolerance=1e-4)
    assert report.passed, f"max rel error {report.max_rel_error}"


def test_grad_leaves_mean_net_untouched():
    rng = np.random.default_rng(2)
    params = random_params(rng)
    before = params.mean_net.flat.copy()
    dispersion_grad(
        params,
        DispersionSample(rng.standard_normal(3), rng.standard_normal(2), rng.standard_normal(2)),
        0.1,
    )
    assert np.array_equal(params.mean_net.flat, before)


# -- closed-form stationary sigma ------------------------------------------------


def test_closed_form_degenerate_batch():
    mu = np.zeros((3, 2))
    res = closed_form_sigma(mu, mu, mu, alpha=0.1)
    assert np.array_equal(res.sigma, np.zeros(2))
    assert res.zero_dispersion.all()
    assert res.degenerate


def test_closed_form_hand_computed():
    # (m-mu)^2 in {0.04, 0.16}, (a-mu)^2 in {0.25, 0.01}, alpha=0.1:
    # sigma*^2 = (0.1 + 0.1*0.13)/1.1
    modes = np.array([[0.2], [-0.4]])
    actions = np.array([[-0.5], [0.1]])
    means = np.zeros((2, 1))
    res = closed_form_sigma(modes, actions, means, alpha=0.1)
    assert res.sigma[0] == pytest.approx(np.sqrt(0.113 / 1.1), rel=1e-14)
    assert res.sigma[0] == pytest.approx(0.3205109557055308, rel=1e-12)
    assert not res.degenerate


def test_closed_form_agrees_with_numerical_minimization():
    rng = np.random.default_rng(3)
    modes = rng.standard_normal((40, 1)) * 0.5
    actions = rng.standard_normal((40, 1)) * 0.8
    means = rng.standard_normal((40, 1)) * 0.2
    alpha = 0.3

    def batch_loss(eta):
        return float(
            loss_parts(means, np.full((40, 1), eta), actions, modes, alpha).mean()
        )

    opt = minimize_scalar(batch_loss, bounds=(-6, 3), method="bounded")
    res = closed_form_sigma(modes, actions, means, alpha)
    assert np.log(res.sigma[0]) == pytest.approx(opt.x, abs=1e-5)


def test_closed_form_empty_batch_rejected():
    empty = np.zeros((0, 1))
    with pytest.raises(ValueError):
        closed_form_sigma(empty, empty, empty, 0.1)


def test_bias_only_optimization_converges_to_closed_form():
    # Log-std net fed a zero input trains only its output bias; Adam descent on
    # the frozen batch must land on the closed-form minimizer.
    rng = np.random.default_rng(4)
    d = 2
    modes = rng.standard_normal((64, d)) * 0.4
    actions = rng.standard_normal((64, d)) * 0.7
    means = np.zeros((64, d))
    alpha = 0.1
    target = closed_form_sigma(modes, actions, means, alpha).sigma

    net = DenseNet([1, d], output_bias=-1.0)
    state = AdamState(step_size=0.02, dim=net.num_params)
    zero_in = np.zeros((64, 1))
    for _ in range(3000):
        log_stds = net.forward_batch(zero_in)
        up = output_grad(means, log_stds, actions, modes, alpha)
        g = net.backward_batch(zero_in, up / 64.0)
        net.flat[:] = adam_step(state, net.flat, g, "descent")
    sigma = np.exp(net.forward(np.zeros(1)))
    np.testing.assert_allclose(sigma, target, atol=1e-3)


def test_shrinkage_law_monte_carlo():
    # With m = mu and actions drawn at std sigma_old, the stationary point
    # contracts the variance by alpha / (1 + alpha).
    rng = np.random.default_rng(5)
    sigma_old = 0.6
    alpha = 0.1
    actions = rng.standard_normal((100_000, 1)) * sigma_old
    zeros = np.zeros_like(actions)
    res = closed_form_sigma(zeros, actions, zeros, alpha)
    ratio = float(res.sigma[0] ** 2 / sigma_old**2)
    expected = alpha / (1.0 + alpha)
    assert abs(ratio - expected) / expected < 0.02

import numpy as np
import pytest

from acerax.envs import (
    EnvironmentFault,
    Lqr2,
    Pendulum1,
    PointMass,
    lqr_optimal_gain,
    make_env,
    riccati_policy,
)
from acerax.harness import rollout_policy


def test_make_env_names():
    assert isinstance(make_env("lqr2"), Lqr2)
    assert isinstance(make_env("pointmass"), PointMass)
    assert isinstance(make_env("pendulum1"), Pendulum1)
    with pytest.raises(ValueError):
        make_env("walker")
    with pytest.raises(ValueError):
        make_env("pointmass", noise_std=0.1)


@pytest.mark.parametrize("name", ["lqr2", "pointmass", "pendulum1"])
def test_envs_deterministic_given_seed(name):
    def trajectory(seed):
        env = make_env(name)
        rng = np.random.default_rng(seed)
        s = env.reset(rng)
        out = [s]
        for i in range(30):
            res = env.step(0.1 * np.ones(env.spec.action_dim) * (-1) ** i, rng)
            out.append(res.next_state)
            out.append(np.array([res.reward]))
            if res.terminal or res.truncated:
                s = env.reset(rng)
                out.append(s)
        return np.concatenate(out)

    assert np.array_equal(trajectory(7), trajectory(7))
    assert not np.array_equal(trajectory(7), trajectory(8))


@pytest.mark.parametrize("name", ["lqr2", "pointmass", "pendulum1"])
def test_rewards_bounded(name):
    bounds = {"lqr2": 50.9, "pointmass": 4.27, "pendulum1": 16.28}
    env = make_env(name)
    rng = np.random.default_rng(0)
    s = env.reset(rng)
    for _ in range(500):
        a = rng.uniform(env.spec.action_low, env.spec.action_high)
        res = env.step(a, rng)
        assert -bounds[name] <= res.reward <= 0.0
        if res.terminal or res.truncated:
            env.reset(rng)


@pytest.mark.parametrize("name", ["lqr2", "pointmass", "pendulum1"])
def test_non_finite_action_faults(name):
    env = make_env(name)
    env.reset(np.random.default_rng(0))
    bad = np.full(env.spec.action_dim, np.nan)
    with pytest.raises(EnvironmentFault):
        env.step(bad, np.random.default_rng(0))


def test_lqr_equilibrium():
    env = Lqr2(noise_std=0.0)
    env.reset(np.random.default_rng(0))
    env._x = np.zeros(2)
    res = env.step(np.zeros(1), np.random.default_rng(0))
    assert np.array_equal(res.next_state, np.zeros(2))
    assert res.reward == 0.0


def test_lqr_reset_distribution():
    env = Lqr2()
    rng = np.random.default_rng(1)
    starts = np.array([env.reset(rng) for _ in range(2000)])
    assert starts.min() >= -1.0 and starts.max() <= 1.0
    assert starts.min() < -0.9 and starts.max() > 0.9  # actually fills the box
    assert abs(starts.mean()) < 0.05


def test_lqr_episode_truncates_not_terminates():
    env = Lqr2()
    rng = np.random.default_rng(2)
    env.reset(rng)
    for i in range(env.spec.max_episode_steps):
        res = env.step(np.zeros(1), rng)
        assert not res.terminal
    assert res.truncated


def riccati_fixed_point(gamma, iters=10_000, tol=1e-13):
    """Independent value-iteration solution of the discounted Riccati equation."""
    a, b, q, r = Lqr2.A, Lqr2.B, Lqr2.Q, Lqr2.R
    p = np.zeros((2, 2))
    for _ in range(iters):
        gain = np.linalg.solve(r + gamma * b.T @ p @ b, gamma * b.T @ p @ a)
        closed = a - b @ gain
        nxt = q + gain.T @ r @ gain + gamma * closed.T @ p @ closed
        if np.abs(nxt - p).max() < tol:
            return nxt
        p = nxt
    raise AssertionError("fixed-point iteration did not converge")


def test_riccati_gain_matches_fixed_point_iteration():
    gamma = 0.98
    p_iter = riccati_fixed_point(gamma)
    k, p = lqr_optimal_gain(gamma)
    np.testing.assert_allclose(p, p_iter, rtol=1e-9)
    k_iter = np.linalg.solve(
        Lqr2.R + gamma * Lqr2.B.T @ p_iter @ Lqr2.B, gamma * Lqr2.B.T @ p_iter @ Lqr2.A
    )
    np.testing.assert_allclose(k, k_iter, rtol=1e-9)


def test_riccati_policy_beats_other_policies():
    gamma = 0.98
    env = Lqr2()
    k, _ = lqr_optimal_gain(gamma)
    lo, hi = env.spec.action_low, env.spec.action_high

    def clipped_linear(gain):
        return lambda s: np.clip(-gain @ s, lo, hi)

    contenders = {
        "zero": lambda s: np.zeros(1),
        "negated": clipped_linear(-k),
        "halved": clipped_linear(0.5 * k),
        "doubled": clipped_linear(2.0 * k),
        "perturbed": clipped_linear(k + np.array([[0.4, -0.3]])),
    }
    oracle = rollout_policy(env, riccati_policy(gamma, env), 30, np.random.default_rng(11))
    for name, pol in contenders.items():
        other = rollout_policy(env, pol, 30, np.random.default_rng(11))
        assert oracle.mean() >= other.mean(), f"{name} beat the riccati policy"


def test_lqr_gain_validates_gamma():
    with pytest.raises(ValueError):
        lqr_optimal_gain(1.0)
    with pytest.raises(ValueError):
        lqr_optimal_gain(0.0)


def test_pointmass_starts_at_rest_away_from_goal():
    env = PointMass()
    rng = np.random.default_rng(3)
    for _ in range(200):
        s = env.reset(rng)
        assert np.array_equal(s[2:], np.zeros(2))
        assert np.linalg.norm(s[:2]) >= 0.3


def test_pointmass_terminal_at_goal():
    env = PointMass()
    env.reset(np.random.default_rng(4))
    env._state = np.zeros(4)  # at the goal, zero velocity
    res = env.step(np.zeros(2), np.random.default_rng(4))
    assert res.terminal
    assert not res.truncated


def test_pointmass_toward_goal_improves_reward():
    env = PointMass()
    rng = np.random.default_rng(5)
    s = env.reset(rng)
    toward = -s[:2] / np.linalg.norm(s[:2])
    r_toward = env.step(toward, rng).reward
    env2 = PointMass()
    rng2 = np.random.default_rng(5)
    env2.reset(rng2)
    r_away = env2.step(-toward, rng2).reward
    assert r_toward > r_away


def test_pendulum_observation_is_unit_circle():
    env = Pendulum1()
    rng = np.random.default_rng(6)
    s = env.reset(rng)
    for _ in range(50):
        assert s[0] ** 2 + s[1] ** 2 == pytest.approx(1.0, rel=1e-12)
        assert abs(s[2]) <= 8.0
        s = env.step(rng.uniform(-2, 2, size=1), rng).next_state


def test_pendulum_upright_is_free():
    env = Pendulum1()
    env.reset(np.random.default_rng(7))
    env._angle, env._vel = 0.0, 0.0
    res = env.step(np.zeros(1), np.random.default_rng(7))
    assert res.reward == 0.0

"""Actor-critic with experience replay and adaptive exploration, end to end.

One replay update works through a sampled n-step window:

1. sample a window start uniformly from the buffer;
2. form the temporal-difference signal e: a discounted sum of one-step TD
   errors, each weighted by a soft-truncated product of current-vs-behavior
   density ratios of the actions that led there;
3. e scales the critic gradient at the window's first state;
4. e scales the action log-density gradient for the mean network, minus a
   box penalty on the mean;
5. the dispersion loss gradient updates the log-std network;
6. all three are applied with per-network Adam (ascent for mean and critic
   improvement directions, descent on the dispersion loss).

e is a stop-gradient scalar: steps 3 and 4 multiply it into gradients rather
than differentiating through step 2. The fixed-sigma baseline freezes the
log-std network at a constant and skips step 5.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import numpy as np

from . import dispersion
from . import policy as gp
from .nets import AdamState, DenseNet, adam_step
from .policy import CorruptBufferError, PolicyParams
from .replay import ReplayBuffer, ReplayWindow, Transition, WindowBatch

MODES = ("adaptive", "fixed_sigma")


@dataclass
class Config:
    """Every scalar of the algorithm and the training protocol."""

    env: str = "lqr2"
    seed: int = 0
    # algorithm core
    gamma: float = 0.98
    n_step: int = 10
    trunc_level: float = 3.0
    hard_truncation: bool = False
    alpha: float = 0.1
    capacity: int = 20_000
    minibatch: int = 64
    gradient_steps: int = 1
    # optimization
    actor_step_size: float = 3e-4
    critic_step_size: float = 3e-3
    eta_step_size: float = 3e-4
    # networks
    mean_hidden: tuple[int, ...] = (32, 24)
    critic_hidden: tuple[int, ...] = (32, 24)
    eta_hidden: tuple[int, ...] = (4, 3)
    eta_output_bias: float = -1.0
    # action handling
    penalty_coeff: float = 1.0
    action_box: float | None = None  # half-width override; None = environment box
    # exploration mode
    mode: str = "adaptive"
    sigma: float | tuple[float, ...] = 0.4  # fixed_sigma mode only
    # training protocol
    total_steps: int = 200_000
    eval_interval: int = 5_000
    eval_episodes: int = 5
    env_noise: float | None = None

    def validate(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.n_step < 1:
            raise ValueError(f"n_step must be at least 1, got {self.n_step}")
        if not self.trunc_level > 1.0:
            raise ValueError(f"trunc_level must exceed 1, got {self.trunc_level}")
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.capacity < 1 or self.minibatch < 1 or self.gradient_steps < 1:
            raise ValueError("capacity, minibatch, and gradient_steps must be positive")
        for name in ("actor_step_size", "critic_step_size", "eta_step_size"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        sig = np.atleast_1d(np.asarray(self.sigma, dtype=np.float64))
        if self.mode == "fixed_sigma" and not (sig > 0.0).all():
            raise ValueError(f"fixed sigma must be positive, got {self.sigma}")
        if self.penalty_coeff < 0.0:
            raise ValueError(f"penalty_coeff must be non-negative, got {self.penalty_coeff}")
        if self.action_box is not None and not self.action_box > 0.0:
            raise ValueError(f"action_box must be positive, got {self.action_box}")
        for name in ("mean_hidden", "critic_hidden", "eta_hidden"):
            sizes = getattr(self, name)
            if any(int(s) < 1 for s in sizes):
                raise ValueError(f"{name} sizes must be positive, got {sizes}")
        if self.total_steps < 0 or self.eval_interval < 1 or self.eval_episodes < 1:
            raise ValueError("total_steps, eval_interval, eval_episodes out of range")
        if self.env_noise is not None and self.env_noise < 0.0:
            raise ValueError(f"env_noise must be non-negative, got {self.env_noise}")


def full_scale_config(**overrides) -> Config:
    """Benchmark-sized preset: big nets and buffer, small step sizes."""
    base = Config(
        capacity=1_000_000,
        minibatch=256,
        actor_step_size=3e-5,
        critic_step_size=3e-4,
        eta_step_size=3e-8,
        mean_hidden=(400, 300),
        critic_hidden=(400, 300),
        eta_hidden=(40, 30),
    )
    return replace(base, **overrides)


PRESETS = {"toy": Config, "full": full_scale_config}


# -- soft truncation ---------------------------------------------------------


def psi(z, trunc_level: float, hard: bool = False):
    """Soft truncation b*tanh(z/b): odd, monotone, bounded by +-b, slope 1 at 0.

    With ``hard`` the original min(z, b) cap is used instead (A/B option).
    """
    if not trunc_level > 1.0:
        raise ValueError(f"truncation level must exceed 1, got {trunc_level}")
    z = np.asarray(z, dtype=np.float64)
    out = np.minimum(z, trunc_level) if hard else trunc_level * np.tanh(z / trunc_level)
    return float(out) if out.ndim == 0 else out


def psi_from_log(log_z, trunc_level: float, hard: bool = False):
    """psi applied to exp(log_z) without overflowing for large positive logs."""
    z = np.exp(np.minimum(log_z, 700.0))
    return psi(z, trunc_level, hard)


# -- box penalty --------------------------------------------------------------


def box_penalty(mean: np.ndarray, half_width: np.ndarray, coeff: float) -> float:
    """Quadratic hinge outside the action box, summed over dimensions."""
    excess = np.maximum(0.0, np.abs(mean) - half_width)
    return float(coeff * (excess**2).sum())


def box_penalty_grad(mean: np.ndarray, half_width: np.ndarray, coeff: float) -> np.ndarray:
    """Derivative of the box penalty with respect to the mean (any leading dims)."""
    excess = np.maximum(0.0, np.abs(mean) - half_width)
    return 2.0 * coeff * excess * np.sign(mean)


# -- temporal difference ------------------------------------------------------


def temporal_difference(
    window: ReplayWindow, params: PolicyParams, critic: DenseNet, config: Config
) -> float:
    """The truncated density-ratio n-step TD signal for one window.

    Reference single-window implementation; the training loop uses the
    batched equivalent below. Ratio products accumulate in log space and are
    exponentiated once inside the truncation.
    """
    gamma, level, hard = config.gamma, config.trunc_level, config.hard_truncation
    e = 0.0
    log_ratio = 0.0
    discount = 1.0
    length = len(window)
    v_here = float(critic.forward(window.states[0])[0])
    for k in range(length):
        phi_k = float(window.phis[k])
        if not phi_k > 0.0:
            raise CorruptBufferError(f"stored density {phi_k} at window offset {k}")
        h = gp.head(params, window.states[k])
        log_ratio += gp.log_density(h, window.actions[k]) - np.log(phi_k)
        if k + 1 < length:
            v_next = float(critic.forward(window.states[k + 1])[0])
        elif window.ends_terminal:
            v_next = 0.0
        else:
            v_next = float(critic.forward(window.boot_state)[0])
        delta = float(window.rewards[k]) + gamma * v_next - v_here
        e += discount * delta * psi_from_log(log_ratio, level, hard)
        discount *= gamma
        v_here = v_next
    return e


def _batch_temporal_difference(
    wb: WindowBatch, params: PolicyParams, critic: DenseNet, config: Config
):
    """Vectorized TD signals for a whole window batch.

    Returns (e, means0, log_stds0, log_phi0) where the trailing entries are
    the policy head outputs and current log densities at each window's first
    state, reused by the gradient stage.
    """
    batch, n = wb.rewards.shape
    flat = wb.states.reshape(batch * n, -1)
    means = params.mean_net.forward_batch(flat).reshape(batch, n, -1)
    log_stds = params.log_std_net.forward_batch(flat).reshape(batch, n, -1)
    log_phi = gp.log_density_parts(means, log_stds, wb.actions)  # (batch, n)
    log_ratio = np.cumsum(log_phi - np.log(wb.phis), axis=1)
    v = critic.forward_batch(flat).reshape(batch, n)
    v_boot = critic.forward_batch(wb.boot_states)[:, 0]
    v_next = np.empty_like(v)
    v_next[:, :-1] = v[:, 1:]
    v_next[:, -1] = 0.0
    rows = np.arange(batch)
    v_next[rows, wb.lengths - 1] = np.where(wb.ends_terminal, 0.0, v_boot)
    delta = wb.rewards + config.gamma * v_next - v
    weights = psi_from_log(log_ratio, config.trunc_level, config.hard_truncation)
    mask = np.arange(n)[None, :] < wb.lengths[:, None]
    discounts = config.gamma ** np.arange(n)
    e = (discounts[None, :] * delta * weights * mask).sum(axis=1)
    return e, means[:, 0, :], log_stds[:, 0, :], log_phi[:, 0]


# -- gradient estimates -------------------------------------------------------


def critic_grad(window: ReplayWindow, critic: DenseNet, e: float) -> np.ndarray:
    """Improvement direction for the critic: e times its gradient at the first state."""
    return critic.backward(window.states[0], np.array([e]))


def actor_grad(
    window: ReplayWindow,
    params: PolicyParams,
    e: float,
    config: Config,
    half_width: np.ndarray,
) -> np.ndarray:
    """Improvement direction for the mean net: e-weighted log-density gradient minus
    the box-penalty gradient. e is treated as a constant."""
    s0, a0 = window.states[0], window.actions[0]
    mean = params.mean_net.forward(s0)
    log_std = params.log_std_net.forward(s0)
    inv_var = np.exp(-2.0 * np.clip(log_std, gp.LOG_STD_MIN, gp.LOG_STD_MAX))
    upstream = e * (a0 - mean) * inv_var - box_penalty_grad(
        mean, half_width, config.penalty_coeff
    )
    return params.mean_net.backward(s0, upstream)


# -- replay update ------------------------------------------------------------


@dataclass
class Optimizers:
    mean: AdamState
    log_std: AdamState
    critic: AdamState


def make_optimizers(config: Config, params: PolicyParams, critic: DenseNet) -> Optimizers:
    return Optimizers(
        mean=AdamState(config.actor_step_size, params.mean_net.num_params),
        log_std=AdamState(config.eta_step_size, params.log_std_net.num_params),
        critic=AdamState(config.critic_step_size, critic.num_params),
    )


@dataclass(frozen=True)
class ReplayStats:
    """Minibatch diagnostics: mean squared TD signal, mean dispersion loss,
    mean e-weighted first-action log density."""

    critic_loss: float
    dispersion_loss: float
    actor_term: float


def replay_step(
    buffer: ReplayBuffer,
    params: PolicyParams,
    critic: DenseNet,
    opts: Optimizers,
    config: Config,
    rng: np.random.Generator,
    half_width: np.ndarray,
) -> ReplayStats:
    """One minibatch of sampled windows, three averaged gradients, three Adam updates."""
    starts = buffer.sample_starts(config.n_step, config.minibatch, rng)
    if starts is None:
        raise ValueError("replay buffer is not ready")
    wb = buffer.gather(starts, config.n_step)
    e, mean0, log_std0, log_phi0 = _batch_temporal_difference(wb, params, critic, config)
    batch = e.shape[0]
    s0 = wb.states[:, 0, :]
    a0 = wb.actions[:, 0, :]
    m0 = wb.modes[:, 0, :]

    g_critic = critic.backward_batch(s0, e[:, None]) / batch
    inv_var0 = np.exp(-2.0 * np.clip(log_std0, gp.LOG_STD_MIN, gp.LOG_STD_MAX))
    upstream_mean = e[:, None] * (a0 - mean0) * inv_var0 - box_penalty_grad(
        mean0, half_width, config.penalty_coeff
    )
    g_mean = params.mean_net.backward_batch(s0, upstream_mean) / batch

    critic.flat[:] = adam_step(opts.critic, critic.flat, g_critic, "ascent")
    params.mean_net.flat[:] = adam_step(opts.mean, params.mean_net.flat, g_mean, "ascent")

    loss_values = dispersion.loss_parts(mean0, log_std0, a0, m0, config.alpha)
    if config.mode == "adaptive":
        upstream_eta = dispersion.output_grad(mean0, log_std0, a0, m0, config.alpha)
        g_eta = params.log_std_net.backward_batch(s0, upstream_eta) / batch
        params.log_std_net.flat[:] = adam_step(
            opts.log_std, params.log_std_net.flat, g_eta, "descent"
        )

    return ReplayStats(
        critic_loss=float(np.mean(e**2)),
        dispersion_loss=float(np.mean(loss_values)),
        actor_term=float(np.mean(e * log_phi0)),
    )


# -- training loop ------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    """One evaluation point of a training run (CSV row)."""

    step: int
    mean_return: float
    std_return: float
    min_eta: float
    max_eta: float
    critic_loss: float
    dispersion_loss: float
    actor_term: float


@dataclass
class TrainResult:
    rows: list[MetricsRow]
    params: PolicyParams
    critic: DenseNet
    buffer: ReplayBuffer
    eta_clamp_hits: int
    config: Config


def fixed_sigma_vector(config: Config, action_dim: int) -> np.ndarray:
    sig = np.atleast_1d(np.asarray(config.sigma, dtype=np.float64))
    if sig.size == 1:
        sig = np.full(action_dim, sig[0])
    if sig.shape != (action_dim,):
        raise ValueError(f"sigma has {sig.size} entries, action dimension is {action_dim}")
    return sig


def build_networks(
    config: Config, state_dim: int, action_dim: int, seed_seq: np.random.SeedSequence
) -> tuple[PolicyParams, DenseNet]:
    """Fresh policy and critic networks, deterministically initialized.

    In fixed_sigma mode the log-std net is all-zero with its output bias set
    to log(sigma): a frozen constant head.
    """
    rng_mean, rng_eta, rng_critic = (np.random.default_rng(s) for s in seed_seq.spawn(3))
    mean_net = DenseNet([state_dim, *config.mean_hidden, action_dim], rng=rng_mean)
    eta_sizes = [state_dim, *config.eta_hidden, action_dim]
    if config.mode == "fixed_sigma":
        log_std_net = DenseNet(
            eta_sizes, output_bias=np.log(fixed_sigma_vector(config, action_dim))
        )
    else:
        log_std_net = DenseNet(eta_sizes, rng=rng_eta, output_bias=config.eta_output_bias)
    critic = DenseNet([state_dim, *config.critic_hidden, 1], rng=rng_critic)
    return PolicyParams(mean_net=mean_net, log_std_net=log_std_net), critic


def resolve_action_box(config: Config, env_spec) -> tuple[np.ndarray, np.ndarray]:
    """Action box (low, high); the box must be symmetric for the hinge penalty."""
    if config.action_box is not None:
        hw = np.full(env_spec.action_dim, float(config.action_box))
        return -hw, hw
    lo, hi = env_spec.action_low, env_spec.action_high
    if not np.allclose(lo, -hi):
        raise ValueError("environment action box must be symmetric")
    return lo, hi


@dataclass(frozen=True)
class EvalResult:
    returns: np.ndarray  # per-episode undiscounted reward sums
    eta_mean: np.ndarray  # per-dimension mean of log-std outputs over visited states


def evaluate(
    env,
    params: PolicyParams,
    box: tuple[np.ndarray, np.ndarray],
    episodes: int,
    rng: np.random.Generator,
) -> EvalResult:
    """Deterministic rollouts: action = clipped mean, no exploration noise."""
    if episodes < 1:
        raise ValueError(f"episodes must be positive, got {episodes}")
    lo, hi = box
    returns = np.empty(episodes)
    eta_sum = np.zeros(params.action_dim)
    states_seen = 0
    for ep in range(episodes):
        s = env.reset(rng)
        total = 0.0
        while True:
            eta_sum += params.log_std_net.forward(s)
            states_seen += 1
            action = np.clip(params.mean_net.forward(s), lo, hi)
            res = env.step(action, rng)
            total += res.reward
            s = res.next_state
            if res.terminal or res.truncated:
                break
        returns[ep] = total
    return EvalResult(returns=returns, eta_mean=eta_sum / states_seen)


def run_training(env, config: Config) -> TrainResult:
    """The full interaction/replay loop; a pure function of (config, seed)."""
    config.validate()
    spec = env.spec
    box = resolve_action_box(config, spec)
    lo, hi = box
    dim = spec.action_dim

    root = np.random.SeedSequence(config.seed)
    net_ss, env_ss, noise_ss, replay_ss, eval_ss = root.spawn(5)
    env_rng = np.random.default_rng(env_ss)
    noise_rng = np.random.default_rng(noise_ss)
    replay_rng = np.random.default_rng(replay_ss)

    params, critic = build_networks(config, spec.state_dim, dim, net_ss)
    opts = make_optimizers(config, params, critic)
    buffer = ReplayBuffer(config.capacity, spec.state_dim, dim)

    rows: list[MetricsRow] = []
    acc: list[ReplayStats] = []
    eta_clamp_hits = 0

    def eval_point(step: int) -> None:
        # evaluation runs on its own copy: the training episode in `env` must
        # continue undisturbed across evaluation points
        eval_rng = np.random.default_rng(eval_ss.spawn(1)[0])
        res = evaluate(copy.deepcopy(env), params, box, config.eval_episodes, eval_rng)
        if acc:
            c = float(np.mean([st.critic_loss for st in acc]))
            d = float(np.mean([st.dispersion_loss for st in acc]))
            a = float(np.mean([st.actor_term for st in acc]))
        else:
            c = d = a = float("nan")
        acc.clear()
        rows.append(
            MetricsRow(
                step=step,
                mean_return=float(res.returns.mean()),
                std_return=float(res.returns.std()),
                min_eta=float(res.eta_mean.min()),
                max_eta=float(res.eta_mean.max()),
                critic_loss=c,
                dispersion_loss=d,
                actor_term=a,
            )
        )

    eval_point(0)
    s = env.reset(env_rng)
    for t in range(1, config.total_steps + 1):
        mean = params.mean_net.forward(s)
        log_std = params.log_std_net.forward(s)
        eta_clamp_hits += gp.clamp_hits(log_std)
        noise = noise_rng.standard_normal(dim)
        action = mean + noise * np.exp(np.clip(log_std, gp.LOG_STD_MIN, gp.LOG_STD_MAX))
        res = env.step(np.clip(action, lo, hi), env_rng)
        phi = float(np.exp(gp.log_density_parts(mean, log_std, action)))
        buffer.push(
            Transition(
                s=s,
                a=action,
                r=res.reward,
                m=mean,
                phi=phi,
                terminal=res.terminal,
                truncated=res.truncated,
                boot_state=res.next_state if res.truncated else None,
            )
        )
        s = env.reset(env_rng) if (res.terminal or res.truncated) else res.next_state
        if buffer.ready(config.n_step, config.minibatch):
            for _ in range(config.gradient_steps):
                acc.append(replay_step(buffer, params, critic, opts, config, replay_rng, hi))
        if t % config.eval_interval == 0:
            eval_point(t)

    return TrainResult(
        rows=rows,
        params=params,
        critic=critic,
        buffer=buffer,
        eta_clamp_hits=eta_clamp_hits,
        config=config,
    )


# -- checkpoints ---------------------------------------------------------------


def checkpoint_bytes(params: PolicyParams, critic: DenseNet) -> bytes:
    """Concatenated network blobs in fixed order: mean, log-std, critic."""
    return params.mean_net.to_bytes() + params.log_std_net.to_bytes() + critic.to_bytes()


def load_checkpoint(buf: bytes) -> tuple[PolicyParams, DenseNet]:
    mean_net, offset = DenseNet.from_bytes(buf, 0)
    log_std_net, offset = DenseNet.from_bytes(buf, offset)
    critic, offset = DenseNet.from_bytes(buf, offset)
    if offset != len(buf):
        raise ValueError(f"checkpoint has {len(buf) - offset} trailing bytes")
    return PolicyParams(mean_net=mean_net, log_std_net=log_std_net), critic

"""Diagonal Gaussian policy built from two networks: action mean and log-std.

The standard deviation is the exponential of the log-std network output, so it
is positive by construction and the distribution mode equals the mean. Stored
behavior densities are kept as plain density values; ratio computations go
through log space and exponentiate once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import DenseNet

LOG_2PI = float(np.log(2.0 * np.pi))

# Numerical guard only: log-std is clipped to this range before exponentiation.
# Healthy runs never touch it; the trainer counts activations so tests can
# assert the guard stayed idle.
LOG_STD_MIN = -10.0
LOG_STD_MAX = 4.0


class CorruptBufferError(ValueError):
    """A stored behavior density is non-positive or otherwise unusable."""


@dataclass(frozen=True)
class GaussianHead:
    """Per-state (mean, log_std) pair defining the action distribution."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.log_std.shape:
            raise ValueError(
                f"mean shape {self.mean.shape} != log_std shape {self.log_std.shape}"
            )

    @property
    def std(self) -> np.ndarray:
        return np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))


@dataclass
class PolicyParams:
    """The two policy networks; both map the state to action-dimension vectors."""

    mean_net: DenseNet
    log_std_net: DenseNet

    def __post_init__(self):
        if self.mean_net.input_dim != self.log_std_net.input_dim:
            raise ValueError("mean and log-std nets disagree on state dimension")
        if self.mean_net.output_dim != self.log_std_net.output_dim:
            raise ValueError("mean and log-std nets disagree on action dimension")

    @property
    def state_dim(self) -> int:
        return self.mean_net.input_dim

    @property
    def action_dim(self) -> int:
        return self.mean_net.output_dim


def head(params: PolicyParams, s: np.ndarray) -> GaussianHead:
    """Evaluate both networks at one state."""
    s = np.asarray(s, dtype=np.float64)
    return GaussianHead(params.mean_net.forward(s), params.log_std_net.forward(s))


def head_batch(params: PolicyParams, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(means, log_stds) for a batch of states, each (batch, action_dim)."""
    return params.mean_net.forward_batch(states), params.log_std_net.forward_batch(states)


def sample(h: GaussianHead, noise: np.ndarray) -> np.ndarray:
    """Action = mean + noise * std, with noise a standard-normal draw supplied by the caller."""
    noise = np.asarray(noise, dtype=np.float64)
    return h.mean + noise * h.std


def log_density_parts(
    mean: np.ndarray, log_std: np.ndarray, action: np.ndarray
) -> np.ndarray:
    """Diagonal-normal log density, vectorized over any leading dimensions."""
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    d = mean.shape[-1]
    quad = (action - mean) ** 2 * np.exp(-2.0 * log_std)
    return -(log_std + 0.5 * quad).sum(axis=-1) - 0.5 * d * LOG_2PI


def log_density(h: GaussianHead, action: np.ndarray) -> float:
    """Log density of ``action`` under the head's diagonal normal distribution."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != h.mean.shape:
        raise ValueError(f"action shape {action.shape}, expected {h.mean.shape}")
    return float(log_density_parts(h.mean, h.log_std, action))


def density_ratio(current: GaussianHead, action: np.ndarray, stored_phi: float) -> float:
    """Current-policy density of a stored action divided by its behavior-time density.

    Computed as exp(log current density - log stored density) to survive
    extreme ratios without intermediate under/overflow.
    """
    if not stored_phi > 0.0:
        raise CorruptBufferError(f"stored behavior density must be positive, got {stored_phi}")
    return float(np.exp(log_density(current, action) - np.log(stored_phi)))


def clamp_hits(log_std: np.ndarray) -> int:
    """Number of log-std coordinates outside the numerical-guard range."""
    return int(np.count_nonzero((log_std < LOG_STD_MIN) | (log_std > LOG_STD_MAX)))


def actor_grad_logdensity(
    params: PolicyParams, s: np.ndarray, action: np.ndarray
) -> np.ndarray:
    """Gradient of the action log density with respect to the mean net's parameters.

    The log-std net is held fixed: only the mean path is differentiated.
    """
    s = np.asarray(s, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    mean = params.mean_net.forward(s)
    log_std = params.log_std_net.forward(s)
    if action.shape != mean.shape:
        raise ValueError(f"action shape {action.shape}, expected {mean.shape}")
    inv_var = np.exp(-2.0 * np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX))
    # d log phi / d mean = (a - mean) / sigma^2
    return params.mean_net.backward(s, (action - mean) * inv_var)

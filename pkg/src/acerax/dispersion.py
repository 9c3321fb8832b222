"""Adaptive-exploration loss: keep stored modes and actions likely under the current policy.

For a replayed event with stored mode m and stored action a, the per-event loss
in terms of the current mean mu and log-std eta (both state-dependent network
outputs, elementwise over action coordinates) is

    sum_j [ 0.5 (m_j - mu_j)^2 e^{-2 eta_j}
            + alpha * 0.5 (a_j - mu_j)^2 e^{-2 eta_j}
            + (1 + alpha) eta_j ].

This equals -log phi(m) - alpha log phi(a) up to the additive constant
(1 + alpha) * d/2 * log(2 pi), which is dropped from the value (gradients are
unaffected). Minimizing it over eta widens the distribution when the policy
has been drifting and shrinks it as the policy settles. Only the log-std
network is differentiated; the mean is treated as a constant here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import LOG_STD_MAX, LOG_STD_MIN, PolicyParams


@dataclass(frozen=True)
class DispersionSample:
    """One replayed event: state, stored action, and stored distribution mode."""

    s: np.ndarray
    a: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        if self.a.shape != self.m.shape:
            raise ValueError(f"action shape {self.a.shape} != mode shape {self.m.shape}")


def loss_parts(
    mean: np.ndarray,
    log_std: np.ndarray,
    a: np.ndarray,
    m: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """Loss values from raw head outputs; vectorized over leading dimensions."""
    inv_var = np.exp(-2.0 * np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX))
    quad = 0.5 * ((m - mean) ** 2 + alpha * (a - mean) ** 2) * inv_var
    return (quad + (1.0 + alpha) * log_std).sum(axis=-1)


def output_grad(
    mean: np.ndarray,
    log_std: np.ndarray,
    a: np.ndarray,
    m: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """d loss / d eta_j at the log-std net outputs; vectorized over leading dimensions."""
    inv_var = np.exp(-2.0 * np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX))
    return -((m - mean) ** 2 + alpha * (a - mean) ** 2) * inv_var + (1.0 + alpha)


def dispersion_loss(params: PolicyParams, sample: DispersionSample, alpha: float) -> float:
    """Per-event loss at the current networks. alpha >= 0 weights the action term."""
    if alpha < 0.0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    mean = params.mean_net.forward(sample.s)
    log_std = params.log_std_net.forward(sample.s)
    return float(loss_parts(mean, log_std, sample.a, sample.m, alpha))


def dispersion_grad(params: PolicyParams, sample: DispersionSample, alpha: float) -> np.ndarray:
    """Gradient of the per-event loss with respect to the log-std net's parameters only."""
    if alpha < 0.0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    mean = params.mean_net.forward(sample.s)
    log_std = params.log_std_net.forward(sample.s)
    g = output_grad(mean, log_std, sample.a, sample.m, alpha)
    return params.log_std_net.backward(sample.s, g)


@dataclass(frozen=True)
class StationarySigma:
    """Batch minimizer of the averaged loss for a state-independent log-std."""

    sigma: np.ndarray
    zero_dispersion: np.ndarray  # per-dimension flag: all deviations vanished

    @property
    def degenerate(self) -> bool:
        return bool(self.zero_dispersion.any())


def closed_form_sigma(
    modes: np.ndarray, actions: np.ndarray, means: np.ndarray, alpha: float
) -> StationarySigma:
    """Minimizer of the batch-averaged loss over a shared per-dimension sigma.

    With the means fixed per sample, the average loss is minimized at
    sigma_j^2 = mean_i[(m_ij - mu_ij)^2 + alpha (a_ij - mu_ij)^2] / (1 + alpha).
    Dimensions where every deviation is zero are reported as degenerate
    (the minimizer runs to sigma -> 0).
    """
    if alpha < 0.0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    modes = np.atleast_2d(np.asarray(modes, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    if modes.shape[0] == 0:
        raise ValueError("empty batch")
    if modes.shape != actions.shape or modes.shape != means.shape:
        raise ValueError(
            f"shape mismatch: modes {modes.shape}, actions {actions.shape}, means {means.shape}"
        )
    sigma_sq = ((modes - means) ** 2 + alpha * (actions - means) ** 2).mean(axis=0)
    sigma_sq /= 1.0 + alpha
    return StationarySigma(sigma=np.sqrt(sigma_sq), zero_dispersion=sigma_sq == 0.0)

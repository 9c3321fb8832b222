"""Actor-critic with experience replay and adaptive exploration, at desk scale."""

from .agent import (
    Config,
    MetricsRow,
    TrainResult,
    actor_grad,
    checkpoint_bytes,
    critic_grad,
    evaluate,
    full_scale_config,
    load_checkpoint,
    psi,
    replay_step,
    run_training,
    temporal_difference,
)
from .dispersion import DispersionSample, closed_form_sigma, dispersion_grad, dispersion_loss
from .envs import make_env
from .nets import AdamState, DenseNet, adam_step, finite_diff_check
from .policy import (
    GaussianHead,
    PolicyParams,
    actor_grad_logdensity,
    density_ratio,
    head,
    log_density,
    sample,
)
from .replay import ReplayBuffer, ReplayWindow, Transition

__all__ = [
    "AdamState",
    "Config",
    "DenseNet",
    "DispersionSample",
    "GaussianHead",
    "MetricsRow",
    "PolicyParams",
    "ReplayBuffer",
    "ReplayWindow",
    "TrainResult",
    "Transition",
    "actor_grad",
    "actor_grad_logdensity",
    "adam_step",
    "checkpoint_bytes",
    "closed_form_sigma",
    "critic_grad",
    "density_ratio",
    "dispersion_grad",
    "dispersion_loss",
    "evaluate",
    "finite_diff_check",
    "full_scale_config",
    "head",
    "load_checkpoint",
    "log_density",
    "make_env",
    "psi",
    "replay_step",
    "run_training",
    "sample",
    "temporal_difference",
]

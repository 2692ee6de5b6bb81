"""Primal-dual unsupervised learning for constrained radio resource
allocation, with the analytic baselines used to validate it."""

__version__ = "0.1.0"

from .channel_env import (ChannelBatch, SystemConfig, config_hash,
                          config_with_overrides, load_config, pathloss_gain,
                          sample_fading, sample_users)
from .nn_core import LrSchedule, Mlp
from .qos_math import (QosTarget, achievable_rate, effective_bandwidth,
                       effective_capacity, inv_gaussian_q, qos_exponent,
                       qos_gap, rate_dP, rate_dW, rate_dW_fixed_density)

__all__ = [
    "ChannelBatch", "SystemConfig", "config_hash", "config_with_overrides",
    "load_config", "pathloss_gain", "sample_fading", "sample_users",
    "LrSchedule", "Mlp",
    "QosTarget", "achievable_rate", "effective_bandwidth", "effective_capacity",
    "inv_gaussian_q", "qos_exponent", "qos_gap", "rate_dP", "rate_dW",
    "rate_dW_fixed_density",
]

"""Python access to the diffbridge samplers and grid oracle."""

from ._core import (
    ConfigError,
    ConvergenceError,
    IpfError,
    config_ini,
    evaluate,
    grid_sinkhorn,
    ks_standard_normal,
    ou_moments,
    read_samples,
    run,
    verify,
)

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "IpfError",
    "config_ini",
    "evaluate",
    "grid_sinkhorn",
    "ks_standard_normal",
    "ou_moments",
    "read_samples",
    "run",
    "verify",
]

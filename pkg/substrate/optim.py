"""
ADAM updates and the exponential learning-rate schedule.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from shared.exceptions import ConfigurationError, ContractViolation, NumericalError
from substrate.params import ParamSet

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


@dataclass
class AdamState:
    """First/second moment estimates per parameter and the shared step count."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: ParamSet) -> 'AdamState':
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.items()},
            v={name: np.zeros_like(t.data) for name, t in params.items()},
            t=0
        )


def adam_update(
    params: ParamSet,
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    epsilon: float = ADAM_EPSILON
) -> Tuple[ParamSet, AdamState]:
    """
    Apply one bias-corrected ADAM step in place.

    Args:
        params: Parameters with populated gradients
        state: Moment estimates; `t` is incremented by exactly one
        lr: Step size (0 leaves parameters unchanged)
        beta1, beta2, epsilon: ADAM constants

    Returns:
        The (mutated) params and state

    Raises:
        NumericalError: If any gradient entry is non-finite (nothing is modified)
        ConfigurationError: If lr is negative or betas are outside [0, 1)
        ContractViolation: If state does not match the parameter set
    """
    if lr < 0:
        raise ConfigurationError(f"learning rate must be non-negative, got {lr}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ConfigurationError(f"ADAM betas must lie in [0, 1), got {beta1}, {beta2}")
    for name in params:
        if name not in state.m or state.m[name].shape != params[name].shape:
            raise ContractViolation(f"ADAM state does not match parameter '{name}'")
        grad = params.gradient(name)
        if not np.all(np.isfinite(grad)):
            bad = int(np.size(grad) - np.count_nonzero(np.isfinite(grad)))
            raise NumericalError(f"Non-finite gradient in parameter '{name}' ({bad} entries)")

    state.t += 1
    correction1 = 1.0 - beta1 ** state.t
    correction2 = 1.0 - beta2 ** state.t
    for name, tensor in params.items():
        g = params.gradient(name)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        step = lr * m_hat / (np.sqrt(v_hat) + epsilon)
        tensor.data -= step.astype(tensor.dtype, copy=False)
    return params, state


def exp_decay_lr(step: int, lr0: float, gamma: float, period: int) -> float:
    """
    Exponentially decaying learning rate: lr0 * gamma ** (step / period).

    Raises:
        ConfigurationError: If a field constraint is violated
    """
    if step < 0:
        raise ConfigurationError(f"step must be non-negative, got {step}")
    if lr0 <= 0:
        raise ConfigurationError(f"lr0 must be positive, got {lr0}")
    if not 0.0 < gamma < 1.0:
        raise ConfigurationError(f"gamma must lie in (0, 1), got {gamma}")
    if period < 1:
        raise ConfigurationError(f"period must be positive, got {period}")
    return float(lr0 * gamma ** (step / period))

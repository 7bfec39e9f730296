"""
Finite-difference verification of analytic gradients.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from shared.exceptions import ConfigurationError
from substrate.params import ParamSet
from substrate.rng import RngStream
from substrate.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference comparison."""
    max_relative_error: float
    worst_entry: Optional[Tuple[str, int]]
    checked: int
    tolerance: float
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_relative_error < self.tolerance


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(
    scalar_function: Callable[[], Tensor],
    params: ParamSet,
    step: float = 1e-5,
    sample_size: int = 100,
    seed: int = 0,
    tolerance: float = 1e-4,
    floor: float = 1e-6,
    analytic: Optional[Dict[str, np.ndarray]] = None,
    names: Optional[List[str]] = None
) -> GradCheckReport:
    """
    Compare analytic gradients with central differences (f(t+h) - f(t-h)) / 2h.

    `scalar_function` rebuilds the scalar from the current parameter values on
    every call, so it must be deterministic (seed any randomness inside it).

    Args:
        scalar_function: Builds the scalar loss from `params`
        params: Float64 parameters; values are restored after each perturbation
        step: Finite-difference step h
        sample_size: Number of parameter entries checked (all if larger than the total)
        seed: Seed of the entry sample
        tolerance: Largest accepted relative error
        floor: Denominator floor so vanishing gradients are judged absolutely
        analytic: Gradients to test instead of running backward
        names: Restrict the sample to these parameters

    Returns:
        GradCheckReport with the worst relative error

    Raises:
        ConfigurationError: If parameters are not 64-bit
    """
    if params.dtype != np.float64:
        raise ConfigurationError(f"finite_diff_check needs float64 parameters, got {params.dtype}")

    if analytic is None:
        params.zero_grad()
        loss = scalar_function()
        loss.backward()
        analytic = {name: params.gradient(name).copy() for name in params}

    names = names or params.names()
    sizes = [params[n].data.size for n in names]
    total = int(sum(sizes))
    rng = RngStream(seed)
    positions = np.arange(total) if sample_size >= total else np.sort(rng.choice(total, sample_size))
    offsets = np.cumsum([0] + sizes)

    report = GradCheckReport(max_relative_error=0.0, worst_entry=None, checked=0, tolerance=tolerance)
    for position in positions:
        slot = int(np.searchsorted(offsets, position, side='right') - 1)
        name, index = names[slot], int(position - offsets[slot])
        flat = params[name].data.reshape(-1)
        original = flat[index]
        try:
            flat[index] = original + step
            upper = scalar_function().item()
            flat[index] = original - step
            lower = scalar_function().item()
        finally:
            flat[index] = original
        report.checked += 1
        if not (np.isfinite(upper) and np.isfinite(lower)):
            report.failures.append(f"{name}[{index}]: non-finite evaluation")
            continue
        numeric = (upper - lower) / (2.0 * step)
        exact = float(analytic[name].reshape(-1)[index])
        error = relative_error(exact, numeric, floor)
        if error > report.max_relative_error:
            report.max_relative_error = error
            report.worst_entry = (name, index)
        if error >= tolerance:
            report.failures.append(f"{name}[{index}]: analytic {exact:.6e} vs numeric {numeric:.6e}")

    logger.debug(f"Gradient check over {report.checked} entries: max relative error {report.max_relative_error:.3e}")
    return report

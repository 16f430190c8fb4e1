"""
Central finite-difference verification of analytic gradients
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from loguru import logger

from skeattn_utils.autodiff import gradients, no_grad
from skeattn_utils.errors import ToleranceExceededError


@dataclass
class GradCheckReport:
    """
    Outcome of a finite-difference check

    :param errors: parameter name -> maximum relative error over the checked entries
    :param checked: parameter name -> number of entries that were perturbed
    """

    errors: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def offending(self):
        return sorted(name for name, err in self.errors.items() if err > self.tol)

    @property
    def passed(self):
        return not self.offending

    def to_frame(self):
        return pd.DataFrame(
            {
                "parameter": list(self.errors),
                "max_rel_error": list(self.errors.values()),
                "entries": [self.checked[name] for name in self.errors],
            }
        )


def relative_error(analytic, numeric, floor=1e-5):
    """
    |a - n| / max(|a|, |n|, floor). The floor keeps near-zero gradients from
    turning rounding noise into large relative errors.
    """
    return np.abs(analytic - numeric) / np.maximum(
        np.maximum(np.abs(analytic), np.abs(numeric)), floor
    )


def _entries(parameter, max_entries, rng):
    if max_entries is None or parameter.size <= max_entries:
        return np.arange(parameter.size)
    return np.sort(rng.choice(parameter.size, size=max_entries, replace=False))


def _central_differences(fn, parameter, original, indices, step):
    numeric = np.empty(len(indices))
    try:
        with no_grad():
            for i, flat_index in enumerate(indices):
                perturbed = original.copy().reshape(-1)
                perturbed[flat_index] += step
                parameter.assign(perturbed.reshape(original.shape))
                upper = fn().item()
                perturbed[flat_index] -= 2 * step
                parameter.assign(perturbed.reshape(original.shape))
                lower = fn().item()
                numeric[i] = (upper - lower) / (2 * step)
    finally:
        parameter.assign(original)
    return numeric


def finite_difference_check(
    fn,
    params,
    step=1e-5,
    tol=1e-4,
    floor=1e-5,
    max_entries=None,
    seed=0,
    refinements=0,
    raise_on_failure=True,
):
    """
    Compare the analytic gradient of fn with (f(p+h) - f(p-h)) / 2h

    Run this on float64 parameters; 32-bit rounding noise hides real bugs.

    :param fn: zero-argument callable returning a scalar Tensor. Must be deterministic
    :param params: mapping of name to trainable Parameter
    :param step: finite-difference step h
    :param tol: maximum accepted relative error
    :param floor: denominator floor for the relative error
    :param max_entries: perturb at most this many randomly chosen entries per parameter
    :param seed: seed of the entry selection
    :param refinements: re-measure failing entries at h/10, h/100, ... this many times and
        keep the smallest error. A ReLU kink inside [p - h, p + h] only spoils the larger steps
    :param raise_on_failure: raise ToleranceExceededError listing offending parameters
    :return: GradCheckReport
    """
    rng = np.random.default_rng(seed)
    for name, parameter in params.items():
        if parameter.dtype != np.float64:
            logger.warning(f"gradient check of '{name}' runs at {parameter.dtype}, not float64")

    analytic = gradients(fn(), params)
    report = GradCheckReport(tol=tol)

    for name, parameter in params.items():
        original = np.array(parameter.data)
        indices = _entries(parameter, max_entries, rng)
        expected = analytic[name].reshape(-1)[indices]
        numeric = _central_differences(fn, parameter, original, indices, step)
        errors = relative_error(expected, numeric, floor)

        h = step
        for _ in range(refinements):
            failing = np.flatnonzero(errors > tol)
            if not len(failing):
                break
            h /= 10
            retry = _central_differences(fn, parameter, original, indices[failing], h)
            errors[failing] = np.minimum(errors[failing], relative_error(expected[failing], retry, floor))

        report.errors[name] = float(errors.max()) if len(errors) else 0.0
        report.checked[name] = len(indices)
        logger.debug(f"gradient check {name}: max relative error {report.errors[name]:.3e}")

    if raise_on_failure and not report.passed:
        raise ToleranceExceededError(
            f"analytic gradients disagree with finite differences for {report.offending} "
            f"(max relative error {report.max_error:.3e} > {tol})",
            report.offending,
        )
    return report

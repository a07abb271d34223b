"""
Finite-difference gradient checker
"""
from dataclasses import dataclass, field

import numpy as np

from ..app_settings import GRAD_CHECK_FLOOR, GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE
from .tensor import Tape, zero_grads


@dataclass
class BlockCheck:
    """ Worst checked coordinate of one parameter block """
    name: str
    max_error: float
    analytic: float
    numeric: float
    index: int


@dataclass
class GradCheckReport:
    blocks: list = field(default_factory=list)
    tolerance: float = GRAD_CHECK_TOLERANCE

    @property
    def worst(self):
        return max(self.blocks, key=lambda block: block.max_error) if self.blocks else None

    @property
    def failures(self):
        return [block for block in self.blocks if not block.max_error < self.tolerance]

    @property
    def passed(self):
        return not self.failures


def scaled_error(analytic, numeric, floor=GRAD_CHECK_FLOOR):
    """ |a - n| / max(|a|, |n|, floor): relative error, finite-difference noise floored """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(f, params, h=GRAD_CHECK_STEP, samples=None, rng=None,
               tolerance=GRAD_CHECK_TOLERANCE, analytic_hook=None):
    """
    Compares reverse-mode gradients of a scalar computation with central differences

        - f: zero-argument callable returning a scalar Tensor built from ``params``
        - params: mapping name -> Tensor; values are perturbed in place and restored
        - samples: check at most this many coordinates per block (all when None)
        - analytic_hook(name, grad) -> grad lets tests tamper with the analytic side
    """
    tensors = list(params.values())
    zero_grads(tensors)
    with Tape() as tape:
        out = f()
    tape.backward(out)

    report = GradCheckReport(tolerance=tolerance)
    for name, param in params.items():
        analytic = param.grad if param.grad is not None else np.zeros_like(param.values)
        if analytic_hook is not None:
            analytic = analytic_hook(name, analytic)
        flat_values = param.values.reshape(-1)
        flat_grad = np.asarray(analytic).reshape(-1)
        coords = np.arange(flat_values.size)
        if samples is not None and flat_values.size > samples:
            coords = np.sort(rng.choice(flat_values.size, size=samples, replace=False))

        worst = BlockCheck(name, 0.0, 0.0, 0.0, -1)
        for index in coords:
            original = flat_values[index]
            flat_values[index] = original + h
            plus = f().item()
            flat_values[index] = original - h
            minus = f().item()
            flat_values[index] = original
            numeric = (plus - minus) / (2.0 * h)
            error = scaled_error(float(flat_grad[index]), numeric)
            if error >= worst.max_error:
                worst = BlockCheck(name, error, float(flat_grad[index]), numeric, int(index))
        report.blocks.append(worst)
    zero_grads(tensors)
    return report

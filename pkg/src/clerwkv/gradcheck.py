"""Finite-difference gradient verification oracle.

Central differences in 64-bit; the analytic side is whatever the tape
produces. This is the single oracle every backward pass in the package is
validated against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, InvalidOracleError
from .tensor import Parameter, backward

REL_ERR_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    tolerance: float
    per_param: dict = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def __str__(self):
        lines = [f"grad_check tol={self.tolerance:g} max={self.max_rel_err:.3e} "
                 f"{'PASS' if self.passed else 'FAIL'}"]
        for name, err in sorted(self.per_param.items()):
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_ERR_FLOOR)


def grad_check(fn, params, h=1e-5, tolerance=1e-4) -> GradCheckReport:
    """Compare analytic gradients of scalar-valued ``fn()`` with central differences.

    ``fn`` must be a deterministic closure over ``params`` (all float64).
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ContractViolation(f"grad_check requires float64 parameters ({p.name})")

    first = fn().data.copy()
    second = fn().data.copy()
    if not np.array_equal(first, second):
        raise InvalidOracleError("function is not deterministic; finite differences invalid")

    for p in params:
        p.grad = None
    loss = fn()
    if loss.data.size != 1:
        raise ContractViolation("grad_check requires a scalar-valued function")
    backward(loss)

    report = GradCheckReport(tolerance=tolerance)
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = 0.0
        flat = p.data.reshape(-1)
        aflat = np.asarray(analytic).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn().data)
            flat[i] = orig - h
            f_minus = float(fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, rel_err(float(aflat[i]), numeric))
        report.per_param[p.name] = worst
    return report

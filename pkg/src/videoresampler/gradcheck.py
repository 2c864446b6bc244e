"""Central finite-difference check of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import OracleError
from .nn import Module
from .tensor import Tensor

STRUCTURAL_ZERO_FLOOR = 1e-3


@dataclass
class ParamCheck:
    name: str
    status: str  # "checked" or "frozen"
    max_rel_error: float = 0.0
    max_abs_error: float = 0.0
    passed: bool = True


@dataclass
class GradCheckReport:
    tol: float
    step: float
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def max_rel_error(self) -> float:
        checked = [p.max_rel_error for p in self.params if p.status == "checked"]
        return max(checked, default=0.0)

    def __getitem__(self, name: str) -> ParamCheck:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)


def _named(params) -> list[tuple[str, Tensor]]:
    if isinstance(params, Module):
        return list(params.named_parameters())
    if isinstance(params, Mapping):
        return list(params.items())
    return [(f"param{i}", p) for i, p in enumerate(params)]


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Module | Mapping[str, Tensor] | Iterable[Tensor],
    step: float = 1e-6,
    tol: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f()`` against central differences.

    The relative error of a parameter is the largest elementwise
    |analytic - numeric| divided by the largest gradient magnitude of that
    parameter.  That scale is floored at ``STRUCTURAL_ZERO_FLOOR`` times the
    largest gradient over all checked parameters, so a parameter whose true
    gradient is identically zero (a key bias under softmax) is judged on
    round-off rather than 0/0.  Parameters with ``requires_grad`` off are
    reported as frozen and skipped.
    """
    if not 1e-7 <= step <= 1e-4:
        raise ValueError(f"step must lie in [1e-7, 1e-4], got {step}")
    named = _named(params)

    for _, p in named:
        p.grad = None
    out = f()
    if out.size != 1:
        raise ValueError("f must return a scalar tensor")
    base = float(out.data)
    again = float(f().data)
    if base != again:
        raise OracleError(f"f is not deterministic: {base!r} then {again!r}")
    out.backward()

    checked: list[tuple[str, np.ndarray, np.ndarray]] = []
    report = GradCheckReport(tol=tol, step=step)
    for name, p in named:
        if not p.requires_grad:
            continue
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.data)
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)  # a view: writes perturb the parameter
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2.0 * step)
        checked.append((name, analytic, numeric))

    def scale(a: np.ndarray, n: np.ndarray) -> float:
        return max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(n), initial=0.0)))

    global_scale = max((scale(a, n) for _, a, n in checked), default=0.0)
    results = {}
    for name, analytic, numeric in checked:
        abs_err = float(np.max(np.abs(analytic - numeric), initial=0.0))
        denom = max(scale(analytic, numeric), STRUCTURAL_ZERO_FLOOR * global_scale)
        rel_err = abs_err / denom if denom > 0 else abs_err
        results[name] = ParamCheck(name, "checked", rel_err, abs_err, rel_err <= tol)
    for name, p in named:
        report.params.append(results.get(name) or ParamCheck(name, "frozen"))
    for _, p in named:
        p.grad = None
    return report

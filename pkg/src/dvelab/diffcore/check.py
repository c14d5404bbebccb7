"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tape import Node, backward


@dataclass
class GradCheckReport:
    passed: bool
    tol: float
    max_rel_error: dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.max_rel_error, key=self.max_rel_error.get)
        return name, self.max_rel_error[name]

    def __str__(self) -> str:
        lines = [f"grad_check: {'PASS' if self.passed else 'FAIL'} (tol {self.tol:g})"]
        for name, err in sorted(self.max_rel_error.items()):
            flag = "" if err <= self.tol else "   <-- exceeds tol"
            lines.append(f"  {name}: max rel err {err:.3e}{flag}")
        return "\n".join(lines)


def grad_check(
    f: Callable[[], Node],
    params: dict[str, Node],
    tol: float = 1e-4,
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare reverse-mode gradients of the scalar f() against central differences.

    f must rebuild its graph from the live param values on every call and be
    deterministic; a value drift between two invocations is rejected.
    """
    root = f()
    root2 = f()
    if not np.allclose(root.value, root2.value, rtol=0, atol=0):
        raise ValueError("grad_check: f is not deterministic")

    for p in params.values():
        p.zero_grad()
    root = f()
    backward(root)
    analytic = {k: p.grad.copy() for k, p in params.items()}

    report = GradCheckReport(passed=True, tol=tol)
    for name, p in params.items():
        flat = p.value.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(f().value)
            flat[i] = orig - h
            down = float(f().value)
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * h)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-3)
        report.max_rel_error[name] = float(np.max(np.abs(a - fd) / denom))
        if report.max_rel_error[name] > tol:
            report.passed = False
    return report

"""Finite-difference verification of reverse-mode gradients.

Central differences with step 1e-5, compared element by element against
the gradients produced by backward(). Only meaningful in 64-bit mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ctrbench.errors import NumericError
from ctrbench.ndgrad.optim import Parameter
from ctrbench.ndgrad.tensor import Tape, Tensor, backward

FD_STEP = 1e-5
# Relative error uses max(|a|, |b|, denominator floor) so near-zero
# gradient pairs do not blow up the ratio.
_DENOM_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    tol: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    failed: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed

    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def __str__(self) -> str:
        lines = [f"grad check (tol={self.tol:g})"]
        for name in sorted(self.max_rel_error):
            mark = "FAIL" if name in self.failed else "ok"
            lines.append(f"  {name:40s} max_rel_err={self.max_rel_error[name]:.3e}  {mark}")
        return "\n".join(lines)


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), _DENOM_FLOOR)
    return np.abs(a - b) / denom


def grad_check(loss_fn, params: list[Parameter], tol: float = 1e-4,
               step: float = FD_STEP) -> GradCheckReport:
    """Compare backward() gradients of ``loss_fn`` against central
    differences over every learnable element of every parameter.

    ``loss_fn`` must be a deterministic closure over ``params`` returning
    a scalar Tensor (so repeated evaluations are comparable). Frozen rows
    are skipped: they receive no optimizer updates, and their true
    gradient sits below finite-difference noise.
    """
    with Tape():
        loss = loss_fn()
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(
                f"grad check: non-finite loss {value!r}; "
                f"parameters: {[p.name for p in params]}"
            )
        backward(loss)
    analytic = {}
    for p in params:
        analytic[p.name] = np.zeros_like(p.data) if p.tensor.grad is None \
            else p.tensor.grad.copy()
        p.tensor.grad = None

    def eval_loss() -> float:
        out = loss_fn()
        if isinstance(out, Tensor):
            return out.item()
        return float(out)

    report = GradCheckReport(tol=tol)
    for p in params:
        live = np.ones(p.data.shape, dtype=bool)
        for row in p.frozen_rows:
            live[row] = False
        live = live.reshape(-1)
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            if not live[i]:
                continue
            orig = flat[i]
            flat[i] = orig + step
            up = eval_loss()
            flat[i] = orig - step
            down = eval_loss()
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * step)
        err = relative_error(analytic[p.name].reshape(-1)[live], fd[live])
        worst = float(err.max()) if err.size else 0.0
        report.max_rel_error[p.name] = worst
        if worst > tol:
            report.failed.append(p.name)
    return report

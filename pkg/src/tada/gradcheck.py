"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import VerificationError
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    n_elements: int = 0

    def worst(self) -> str:
        if not self.per_param:
            return "(no parameters)"
        name = max(self.per_param, key=self.per_param.get)
        return f"{name}: {self.per_param[name]:.3e}"


def _eval_scalar(fn) -> tuple[float, Tensor]:
    out = fn()
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise VerificationError("grad_check: function must return a scalar Tensor")
    return out.item(), out


def grad_check(fn, params: dict[str, Tensor], eps: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` must rebuild its graph on every call and depend on ``params``
    only through their ``data`` buffers.  Two baseline evaluations must
    agree bitwise, otherwise the function is non-deterministic and the
    check refuses to run.
    """
    base1, out = _eval_scalar(fn)
    base2, _ = _eval_scalar(fn)
    if base1 != base2 or not np.isfinite(base1):
        raise VerificationError(
            f"grad_check: non-deterministic or non-finite function "
            f"(baselines {base1!r} vs {base2!r})")

    for p in params.values():
        p.grad = None
    out.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    per_param: dict[str, float] = {}
    total = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up, _ = _eval_scalar(fn)
            flat[i] = orig - eps
            down, _ = _eval_scalar(fn)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(a[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(a[i] - numeric) / denom)
        per_param[name] = worst
        total += flat.size
    max_err = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(max_rel_error=max_err, per_param=per_param, n_elements=total)

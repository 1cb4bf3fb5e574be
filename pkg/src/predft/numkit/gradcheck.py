"""Central finite-difference gradient checking."""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"grad_check {status}: max rel error {self.max_rel_error:.3e} at {self.worst_index}"


def autograd_gradient(f, x):
    x.grad = None
    out = f(x)
    backward(out)
    return np.zeros_like(x.data) if x.grad is None else x.grad.copy()


def grad_check(f, x, rel_tol=1e-4, h=1e-6, coords=None, analytic=None, floor=1e-7):
    """Compare the analytic gradient of scalar ``f`` at ``x`` to central differences.

    ``x.data`` is perturbed in place and restored, so ``f`` may ignore its
    argument and read ``x`` from a closure (e.g. a model parameter).
    ``coords`` restricts the check to the given flat indices. ``analytic``
    overrides the gradient source (used to test the checker itself).
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not isinstance(x, Tensor):
        raise TypeError("x must be a Tensor")
    x.requires_grad = True
    ana = analytic(x) if analytic is not None else autograd_gradient(f, x)
    flat = x.data.reshape(-1)
    idx = np.arange(flat.size) if coords is None else np.asarray(coords, dtype=np.int64)
    num = np.zeros(flat.size)
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x).data)
            flat[i] = orig - h
            fm = float(f(x).data)
            flat[i] = orig
            num[i] = (fp - fm) / (2 * h)
    a = np.asarray(ana).reshape(-1)[idx]
    n = num[idx]
    err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    worst = int(np.argmax(err)) if err.size else 0
    max_err = float(err[worst]) if err.size else 0.0
    return GradCheckReport(
        passed=bool(max_err < rel_tol),
        max_rel_error=max_err,
        worst_index=tuple(int(i) for i in np.unravel_index(idx[worst], x.shape)) if err.size else (),
        analytic=np.asarray(ana).reshape(x.shape),
        numeric=num.reshape(x.shape),
    )

"""Central-difference verification of hand-written backward passes.

The loss is piecewise smooth (ReLU, maxpool), so a first sweep at the default
step can straddle a kink and report a spurious mismatch on isolated elements.
Those elements are re-measured at a finer step: kink artifacts vanish (the
shrinking step leaves the kink outside the stencil) while genuine gradient
bugs keep failing at every step.
"""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_EPS = 1e-5
REFINE_STEPS = (1e-6, 1e-7)
DEFAULT_TOLERANCE = 1e-4
ABS_FLOOR = 1e-8


def _central_diff(loss_fn, flat, i, eps):
    orig = flat[i]
    flat[i] = orig + eps
    up = loss_fn()
    flat[i] = orig - eps
    down = loss_fn()
    flat[i] = orig
    return (up - down) / (2 * eps)


def numerical_gradient(loss_fn, param, eps=DEFAULT_EPS):
    """Central finite differences of a scalar loss w.r.t. one array.

    The array is perturbed in place and restored; loss_fn() must read it.
    """
    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        gflat[i] = _central_diff(loss_fn, flat, i, eps)
    return grad


def relative_errors(analytic, numeric, abs_floor=ABS_FLOOR):
    """Elementwise relative error; differences within abs_floor count as 0.

    The absolute fallback keeps near-zero gradients from failing on
    finite-difference noise.
    """
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"gradient shapes differ: {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    denom = np.maximum(np.abs(a), np.abs(b))
    return np.where(diff <= abs_floor, 0.0, diff / np.maximum(denom, abs_floor))


def max_relative_error(analytic, numeric, abs_floor=ABS_FLOOR):
    rel = relative_errors(analytic, numeric, abs_floor)
    return float(rel.max()) if rel.size else 0.0


@dataclass
class GradcheckReport:
    errors: dict = field(default_factory=dict)
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def passed(self):
        return all(np.isfinite(e) and e < self.tolerance for e in self.errors.values())

    def worst(self):
        name = max(self.errors, key=lambda k: self.errors[k])
        return name, self.errors[name]

    def lines(self):
        status = lambda e: "ok" if np.isfinite(e) and e < self.tolerance else "FAIL"
        return [f"{name:16s} max_rel_err={err:.3e}  {status(err)}"
                for name, err in self.errors.items()]


def compare_gradient_sets(analytic, numeric, tolerance=DEFAULT_TOLERANCE):
    """Per-name worst relative error between two gradient dicts."""
    if set(analytic) != set(numeric):
        raise ValueError("gradient sets name different parameter groups")
    report = GradcheckReport(tolerance=tolerance)
    for name in analytic:
        a, b = analytic[name], numeric[name]
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            report.errors[name] = float("inf")
        else:
            report.errors[name] = max_relative_error(a, b)
    return report


def check_gradients(loss_fn, analytic_grads, params, eps=DEFAULT_EPS,
                    tolerance=DEFAULT_TOLERANCE, refine_steps=REFINE_STEPS):
    """Compare analytic gradients against finite differences of loss_fn.

    params maps names to the live arrays loss_fn reads, so perturbations are
    visible to it; analytic_grads maps the same names to precomputed grads.
    """
    report = GradcheckReport(tolerance=tolerance)
    for name, param in params.items():
        a = np.asarray(analytic_grads[name], dtype=np.float64)
        if not np.isfinite(a).all():
            report.errors[name] = float("inf")
            continue
        numeric = numerical_gradient(loss_fn, param, eps)
        if not np.isfinite(numeric).all():
            report.errors[name] = float("inf")
            continue
        rel = relative_errors(a, numeric)
        flat = param.reshape(-1)
        nflat = numeric.reshape(-1)
        for step in refine_steps:
            failing = np.flatnonzero(rel.reshape(-1) >= tolerance)
            if failing.size == 0:
                break
            for i in failing:
                nflat[i] = _central_diff(loss_fn, flat, i, step)
            rel = relative_errors(a, numeric)
        report.errors[name] = float(rel.max()) if rel.size else 0.0
    return report

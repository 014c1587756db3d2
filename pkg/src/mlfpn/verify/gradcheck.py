"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from mlfpn.errors import MlfpnError
from mlfpn.mlfpn import se_attention, se_backward


class GradientCheckError(MlfpnError, FloatingPointError):
    pass


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    worst: tuple  # (parameter name, flat index)


def fd_gradient_harness(
    fn: Callable[[dict], float],
    params: dict,
    analytic: dict,
    eps: float = 1e-3,
) -> GradCheckResult:
    """Compare ``analytic`` gradients of scalar ``fn(params)`` against central differences.

    Every coordinate of every array in ``params`` is perturbed by ``+-eps``
    (in float64). Relative error is ``|a - g| / max(|a|, |g|, 1e-8)``.
    """
    theta = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    worst, worst_at = 0.0, (None, -1)
    for name, arr in theta.items():
        flat = arr.reshape(-1)
        grad = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        if grad.shape != flat.shape:
            raise GradientCheckError(f"{name}: analytic gradient has {grad.size} entries, expected {flat.size}")
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn(theta)
            flat[i] = orig - eps
            f_minus = fn(theta)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2 * eps)
            if not (np.isfinite(fd) and np.isfinite(grad[i])):
                raise GradientCheckError(
                    f"{name}[{i}]: non-finite value (finite difference {fd}, analytic {grad[i]})"
                )
            err = abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-8)
            if err > worst:
                worst, worst_at = err, (name, i)
    return GradCheckResult(worst, worst_at)


def se_loss(upstream: np.ndarray) -> Callable[[dict], float]:
    def f(p):
        out, _ = se_attention(p["x"], p["w1"], p["b1"], p["w2"], p["b2"])
        return float(np.sum(upstream * out))

    return f


def random_se_instance(rng: np.random.Generator, shape=(1, 4, 2, 2), reduction=2, margin=1e-2):
    """Random float64 SE problem whose hidden pre-activations stay ``margin`` away from 0.

    Central differences straddling the ReLU kink are meaningless, so such
    draws are rejected and redrawn.
    """
    c = shape[1]
    hid = max(1, c // reduction)
    while True:
        p = {
            "x": rng.uniform(-1, 1, shape),
            "w1": rng.uniform(-1, 1, (hid, c)),
            "b1": rng.uniform(-0.5, 0.5, hid),
            "w2": rng.uniform(-1, 1, (c, hid)),
            "b2": rng.uniform(-0.5, 0.5, c),
        }
        a1 = p["x"].mean(axis=(2, 3)) @ p["w1"].T + p["b1"]
        if np.abs(a1).min() > margin:
            return p, rng.uniform(-1, 1, shape)


def check_se_instance(params: dict, upstream: np.ndarray, eps: float = 1e-3) -> GradCheckResult:
    grads = se_backward(params["x"], params["w1"], params["b1"], params["w2"], params["b2"], upstream)
    return fd_gradient_harness(se_loss(upstream), params, grads, eps)

"""Central finite-difference verification of analytic gradients."""

import math

import numpy as np


def grad_check(forward, store, h=1e-5, rng=None, max_coords_per_param=20, guided=False):
    """Max relative error between analytic and numerical gradients.

    ``forward`` rebuilds the scalar-valued graph from the live parameter
    tensors in ``store`` on every call (it must be deterministic). Up to
    ``max_coords_per_param`` coordinates per parameter are probed, sampled
    with ``rng`` when a parameter is larger than that. Relative error uses
    denominator max(|analytic|, |numeric|, 1e-6); the floor must stay
    above eps*|f|/h (~1e-11 cancellation noise in the difference), or
    near-zero-gradient coordinates fail on roundoff alone.
    """
    out = forward()
    if not math.isfinite(float(out.value)):
        raise ValueError(f"non-finite forward value {float(out.value)}")
    store.zero_grad()
    out.backward(guided=guided)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.value))
        for name, t in store.items()
    }

    worst = 0.0
    for name, t in store.items():
        flat = t.value.reshape(-1)
        size = flat.shape[0]
        if size <= max_coords_per_param or rng is None:
            coords = np.arange(min(size, max_coords_per_param))
        else:
            coords = rng.choice(size, size=max_coords_per_param, replace=False)
        a_flat = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = float(forward().value)
            flat[c] = orig - h
            f_minus = float(forward().value)
            flat[c] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise ValueError("non-finite forward value during perturbation")
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(a_flat[c]), abs(numeric), 1e-6)
            worst = max(worst, abs(a_flat[c] - numeric) / denom)
    return worst

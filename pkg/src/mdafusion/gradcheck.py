"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, Tensor, backward, no_grad


def finite_diff_check(fn, point, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps one or more Tensors to a scalar Tensor; ``point`` is the
    matching array (or list of arrays) to differentiate at. The error for a
    coordinate is |analytic - numeric| / (|analytic| + |numeric| + 1e-12) and
    the max over all coordinates of all inputs is returned.
    """
    single = not isinstance(point, (list, tuple))
    pts = [np.array(point, dtype=np.float64)] if single else [
        np.array(p, dtype=np.float64) for p in point
    ]

    with Tape():
        tensors = [Tensor(p.copy(), requires_grad=True) for p in pts]
        out = fn(*tensors)
        grads = backward(out, params=tensors)

    def eval_at(arrays) -> float:
        with no_grad():
            return float(fn(*[Tensor(a) for a in arrays]).data)

    max_err = 0.0
    for k, p in enumerate(pts):
        flat = p.reshape(-1)
        gflat = grads[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = eval_at(pts)
            flat[i] = orig - h
            fm = eval_at(pts)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            analytic = gflat[i]
            err = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-12)
            max_err = max(max_err, err)
    return max_err

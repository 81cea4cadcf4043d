"""Central finite-difference verification of analytic gradients.

Every differentiable operation in the package is required to agree with a
central-difference probe of a scalar loss. The checker perturbs each element
of each tensor in place, so it runs the real forward path twice per element;
keep the instances tiny.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-based relative disagreement.

    Gradients whose norms both sit below `floor` are compared against the
    floor instead: directions a normalisation layer provably zeroes out
    (e.g. a bias feeding straight into batch norm) would otherwise divide
    rounding noise by rounding noise.
    """
    na = np.linalg.norm(analytic.ravel())
    nn = np.linalg.norm(numeric.ravel())
    denom = max(na, nn, floor)
    return float(np.linalg.norm((analytic - numeric).ravel()) / denom)


def finite_difference(loss_fn: Callable[[], float], t: Tensor, eps: float) -> np.ndarray:
    """Central-difference gradient of `loss_fn` w.r.t. every element of `t`."""
    grad = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_fn()
            flat[i] = orig - eps
            fm = loss_fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def check_gradients(
    build_loss: Callable[[], Tensor],
    wrt: Sequence[tuple[str, Tensor]],
    eps: float = 1e-5,
) -> dict[str, float]:
    """Compare backward() gradients against central differences.

    `build_loss` must re-run the full forward pass from the current contents
    of the tensors in `wrt` and return a scalar Tensor. Returns the relative
    error per tensor name.
    """
    for _, t in wrt:
        t.grad = None
    loss = build_loss()
    loss.backward()
    analytic = {name: np.array(t.grad, dtype=np.float64, copy=True) for name, t in wrt}

    def scalar_loss() -> float:
        return float(build_loss().data)

    errors = {}
    for name, t in wrt:
        numeric = finite_difference(scalar_loss, t, eps)
        errors[name] = relative_error(analytic[name], numeric)
    return errors


def max_error(errors: dict[str, float]) -> float:
    return max(errors.values()) if errors else 0.0

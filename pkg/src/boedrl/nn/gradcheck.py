from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from boedrl.errors import ContractError

from .tensor import Tensor, backward

# added to |numeric| in the denominator of the relative error
_DENOMINATOR_OFFSET = 1e-8
# rounding error of one loss evaluation, in units of eps * |loss|
_ROUNDOFF_ULPS = 1e3


def _central_difference(
    loss_fn: Callable[[], Tensor], flat: np.ndarray, i: int, h: float
) -> tuple[float, float]:
    """Fourth-order central difference along entry ``i`` of ``flat``, with its rounding floor."""
    original = flat[i]
    values = []
    for step in (2.0 * h, h, -h, -2.0 * h):
        flat[i] = original + step
        values.append(loss_fn().item())
    flat[i] = original
    far_up, up, down, far_down = values
    numeric = (-far_up + 8.0 * up - 8.0 * down + far_down) / (12.0 * h)
    resolution = _ROUNDOFF_ULPS * np.finfo(np.float64).eps * max(map(abs, values)) / h
    return numeric, resolution


def finite_diff_check(
    loss_fn: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-5
) -> float:
    """Largest ``|autodiff - numeric| / (|numeric| + 1e-8)`` over every parameter entry.

    Entries where both derivatives sit below the rounding floor of the difference quotient
    (structural zeros such as a bias that a softmax cancels) carry no signal and are skipped.
    ``loss_fn`` is re-evaluated for each perturbation, so it must rebuild the graph and be
    deterministic; two baseline evaluations that disagree raise :class:`ContractError`.
    """
    first = loss_fn()
    if first.size != 1:
        raise ContractError(f"Loss must be scalar, got shape {first.shape}")
    if loss_fn().item() != first.item():
        raise ContractError("Loss function is not deterministic under a fixed seed")

    for param in params:
        param.zero_grad()
    backward(loss_fn())
    analytic = [param.grad.copy() for param in params]

    worst = 0.0
    for param, grad in zip(params, analytic, strict=True):
        flat = param.data.reshape(-1)
        for i in range(flat.size):
            numeric, resolution = _central_difference(loss_fn, flat, i, epsilon)
            analytic_i = float(grad.reshape(-1)[i])
            if max(abs(numeric), abs(analytic_i)) <= resolution:
                continue
            error = abs(analytic_i - numeric) / (abs(numeric) + _DENOMINATOR_OFFSET)
            worst = max(worst, error)
    for param in params:
        param.zero_grad()
    return worst

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from boedrl.errors import DimensionError

from .tensor import Array, Tensor


@dataclass
class AdamState:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: list[Array] = field(default_factory=list)
    second_moment: list[Array] = field(default_factory=list)

    @classmethod
    def for_shapes(
        cls, shapes: Sequence[tuple[int, ...]], learning_rate: float = 3e-4
    ) -> AdamState:
        return cls(
            learning_rate=learning_rate,
            first_moment=[np.zeros(shape) for shape in shapes],
            second_moment=[np.zeros(shape) for shape in shapes],
        )


def adam_step(state: AdamState, params: Sequence[Array], grads: Sequence[Array]) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place."""
    if not len(params) == len(grads) == len(state.first_moment):
        raise DimensionError(
            f"Adam got {len(params)} params, {len(grads)} grads, "
            f"{len(state.first_moment)} moment slots"
        )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for i, (param, grad) in enumerate(zip(params, grads, strict=True)):
        m, v = state.first_moment[i], state.second_moment[i]
        if not param.shape == grad.shape == m.shape:
            raise DimensionError(
                f"Adam slot {i}: param {param.shape}, grad {grad.shape}, moment {m.shape}"
            )
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        param -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


class Adam:
    def __init__(self, params: Sequence[Tensor], learning_rate: float = 3e-4) -> None:
        self.params = list(params)
        self.state = AdamState.for_shapes([p.shape for p in self.params], learning_rate)

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()

    def step(self) -> None:
        adam_step(self.state, [p.data for p in self.params], [p.grad for p in self.params])


def soft_update(target: Sequence[Tensor], source: Sequence[Tensor], tau: float) -> None:
    """``target <- (1 - tau) * target + tau * source`` elementwise, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if len(target) != len(source):
        raise DimensionError(f"soft_update got {len(target)} targets and {len(source)} sources")
    for dst, src in zip(target, source, strict=True):
        if dst.shape != src.shape:
            raise DimensionError(f"soft_update shape mismatch {dst.shape} vs {src.shape}")
        if tau == 1.0:
            dst.data = src.data.copy()
        elif tau > 0.0:
            dst.data = (1.0 - tau) * dst.data + tau * src.data

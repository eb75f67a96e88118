from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        state = cls(**hyper)
        state.m = [np.zeros_like(p.data if isinstance(p, Tensor) else p) for p in params]
        state.v = [np.zeros_like(p.data if isinstance(p, Tensor) else p) for p in params]
        return state


def adam_step(params, grads, state: AdamState) -> None:
    """One bias-corrected Adam update, applied in place to ``params``.

    ``params`` may be Tensors (their ``data`` is updated) or bare arrays.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots"
        )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        data = p.data if isinstance(p, Tensor) else p
        if data.shape != state.m[i].shape or np.shape(g) != data.shape:
            raise ValueError(
                f"adam_step: shape drift at slot {i}: param {data.shape}, "
                f"grad {np.shape(g)}, state {state.m[i].shape}"
            )
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


class Adam:
    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(
            self.params, learning_rate=lr, beta1=betas[0], beta2=betas[1], epsilon=eps
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)

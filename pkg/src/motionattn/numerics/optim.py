"""Adam optimizer over named parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape, Tensor


class GradientError(RuntimeError):
    """Raised when a step would apply non-finite gradients."""


@dataclass
class AdamState:
    """Per-parameter moment estimates plus the shared step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, Tensor], lr: float) -> "AdamState":
        state = cls(lr=lr)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float | None = None,
) -> None:
    """Bias-corrected Adam update, applied to param data in place.

    The whole step is aborted (no parameter touched) if any gradient is
    non-finite, so a failed step cannot leave the model half-updated.
    """
    for name in params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].data.shape:
            raise GradientError(
                f"gradient shape {g.shape} != parameter shape "
                f"{params[name].data.shape} for {name!r}"
            )
    state.step += 1
    alpha = state.lr if lr is None else lr
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= alpha * (m / c1) / (np.sqrt(v / c2) + state.eps)


def named_gradients(
    tape: Tape, loss: Tensor, params: dict[str, Tensor]
) -> dict[str, np.ndarray]:
    """Gradient dict keyed by parameter name; zeros for untouched leaves."""
    by_tensor = tape.gradients(loss, params.values())
    return {name: by_tensor[p].data for name, p in params.items()}

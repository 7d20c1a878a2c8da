"""Adam with bias correction over named parameter sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


class MissingGradientError(ValueError):
    pass


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
              allow_missing: bool = False) -> AdamState:
    """One in-place Adam update of ``params`` using their ``.grad``.

    Parameters without a gradient raise unless ``allow_missing`` is set, in
    which case they are treated as having a zero gradient.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing and not allow_missing:
        raise MissingGradientError(f"no gradient for parameters: {', '.join(missing)}")
    b1, b2 = betas
    state.t += 1
    t = state.t
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = (lr / corr1) * m / (np.sqrt(v / corr2) + eps)
        p.data -= step.astype(p.data.dtype, copy=False)
    return state

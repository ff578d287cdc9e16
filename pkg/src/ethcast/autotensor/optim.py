from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericFailure


@dataclass(eq=False)
class Parameter:
    """A named trainable array with a gradient buffer of the same shape."""

    name: str
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ValueError(f"{self.name}: gradient shape {self.grad.shape} != {self.value.shape}")

    def zero_grad(self):
        self.grad[...] = 0

    @property
    def shape(self):
        return self.value.shape


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction.

    Raises NumericFailure naming the first parameter whose gradient is not
    finite; in that case no parameter is modified.
    """
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericFailure(f"non-finite gradient in parameter {p.name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p in params:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        g = p.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        p.value -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.value.dtype, copy=False)
    return state

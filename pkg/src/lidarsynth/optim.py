"""Named parameter storage and the Adam update rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["AdamState", "ParamStore", "adam_step"]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class ParamStore:
    """Ordered map of unique names to tensors, with per-parameter Adam state."""

    params: dict[str, Tensor] = field(default_factory=dict)
    adam: dict[str, AdamState] = field(default_factory=dict)

    def add(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float32), requires_grad=trainable)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def trainable_names(self) -> list[str]:
        return [n for n, p in self.params.items() if p.requires_grad]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameter values keyed by name (the checkpointable view)."""
        return {n: p.data for n, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, arr in arrays.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter {name!r}")
            p = self.params[name]
            if p.data.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name!r}: {p.data.shape} vs {arr.shape}")
            p.data = arr.astype(np.float32, copy=True)

    def copy_values(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update on every trainable parameter.

    Gradients must be populated on every trainable parameter; they are left
    in place (zero them explicitly via store.zero_grad()).
    """
    for name in store.trainable_names():
        p = store.params[name]
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
        st = store.adam.get(name)
        if st is None:
            st = AdamState(m=np.zeros_like(p.data), v=np.zeros_like(p.data))
            store.adam[name] = st
        g = p.grad
        st.t += 1
        st.m = beta1 * st.m + (1.0 - beta1) * g
        st.v = beta2 * st.v + (1.0 - beta2) * (g * g)
        m_hat = st.m / (1.0 - beta1**st.t)
        v_hat = st.v / (1.0 - beta2**st.t)
        p.data = p.data - (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)

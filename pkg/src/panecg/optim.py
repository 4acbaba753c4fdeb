"""AdamW with decoupled weight decay and a milestone learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .autodiff import Tensor

__all__ = ["OptimizerState", "AdamW", "multistep_lr"]


def multistep_lr(base_lr: float, epoch: int, milestones: Sequence[int] = (50, 100, 150), gamma: float = 0.5) -> float:
    """base_lr * gamma^(number of milestones <= epoch)."""
    drops = sum(1 for m in milestones if m <= epoch)
    return base_lr * gamma**drops


@dataclass
class OptimizerState:
    """Per-parameter Adam moments plus the shared step counter and schedule."""

    lr: float
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    milestones: Sequence[int] = (50, 100, 150)
    gamma: float = 0.5
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    """Decoupled-weight-decay Adam over named parameters.

    Parameter groups allow a different learning-rate scale and weight decay
    per group (the angular-deviation parameters need a much larger effective
    step than network weights, and 1-d gains/biases are exempt from decay).
    """

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float,
        weight_decay: float = 1e-2,
        milestones: Sequence[int] = (50, 100, 150),
        gamma: float = 0.5,
        group_overrides: Dict[str, dict] | None = None,
    ):
        self.params = dict(params)
        self.state = OptimizerState(lr=lr, weight_decay=weight_decay, milestones=milestones, gamma=gamma)
        self.epoch = 0
        # name -> {"lr": float, "weight_decay": float}; missing names use defaults
        self.group_overrides = group_overrides or {}
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    @property
    def current_lr(self) -> float:
        return multistep_lr(self.state.lr, self.epoch, self.state.milestones, self.state.gamma)

    def _hyper(self, name: str) -> tuple[float, float]:
        ov = self.group_overrides.get(name, {})
        lr = ov.get("lr", self.current_lr)
        wd = ov.get("weight_decay", self.state.weight_decay if self.params[name].data.ndim > 1 else 0.0)
        return lr, wd

    def step(self) -> None:
        st = self.state
        st.step_count += 1
        b1c = 1.0 - st.beta1**st.step_count
        b2c = 1.0 - st.beta2**st.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            lr, wd = self._hyper(name)
            g = p.grad
            m = st.m[name]
            v = st.v[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            mhat = m / b1c
            vhat = v / b2c
            if wd:
                p.data -= (lr * wd) * p.data  # decoupled decay, not via the gradient
            p.data -= lr * mhat / (np.sqrt(vhat) + st.eps)

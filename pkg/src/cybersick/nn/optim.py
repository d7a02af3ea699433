"""Adam with coupled L2 weight decay, global-norm clipping, LR schedules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import ModelGraph


@dataclass
class Schedule:
    """Learning-rate schedule: 'constant', or 'multistep' decaying by
    `factor` at each milestone step."""

    base_lr: float
    kind: str = "constant"
    milestones: tuple = ()
    factor: float = 0.1

    def lr_at(self, step: int) -> float:
        if step < 0:
            raise ValueError("step must be >= 0")
        if self.kind == "constant":
            return self.base_lr
        if self.kind == "multistep":
            passed = sum(1 for m in self.milestones if step >= m)
            return self.base_lr * self.factor ** passed
        raise ValueError(f"unknown schedule kind {self.kind!r}")


def scheduler_lr(schedule: Schedule, step: int) -> float:
    return schedule.lr_at(step)


class MissingGradient(RuntimeError):
    pass


@dataclass
class Adam:
    """Standard Adam with bias correction; weight decay is added to the
    gradient (classic L2 coupling). Frozen parameters are never touched."""

    schedule: Schedule
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    _m: dict = field(default_factory=dict, repr=False)
    _v: dict = field(default_factory=dict, repr=False)

    def step(self, graph: ModelGraph):
        """Apply one update to every unfrozen parameter of `graph`."""
        params = list(graph.named_parameters(trainable_only=True))
        for name, t in params:
            if t.grad is None:
                raise MissingGradient(f"parameter {name} has no gradient")
        lr = self.schedule.lr_at(self.step_count)
        self.step_count += 1
        t_corr = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in params:
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            self._m[name] = m
            self._v[name] = v
            mhat = m / (1.0 - b1 ** t_corr)
            vhat = v / (1.0 - b2 ** t_corr)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_grad_norm(graph: ModelGraph, max_norm: float) -> float:
    """Scale unfrozen gradients so the global L2 norm is at most max_norm.

    Returns the scaling factor that was applied (1.0 when no clip happened).
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = []
    for name, t in graph.named_parameters(trainable_only=True):
        if t.grad is None:
            raise MissingGradient(f"parameter {name} has no gradient")
        grads.append(t.grad)
    total = np.sqrt(sum(float((g * g).sum()) for g in grads))
    if total <= max_norm or total == 0.0:
        return 1.0
    scale = max_norm / total
    for g in grads:
        g *= scale
    return scale

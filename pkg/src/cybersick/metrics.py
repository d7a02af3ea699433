"""Confusion-matrix metrics for the binary sick / non-sick task.

The positive class (label 1) is "sick". Test subjects can carry a single
label; a missing class makes that recall term 0 and sets `class_absent` on
the confusion so downstream reports can flag the value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def class_absent(self) -> bool:
        """True when the evaluated trials contain only one true label."""
        return (self.tp + self.fn) == 0 or (self.tn + self.fp) == 0

    @staticmethod
    def from_predictions(y_true, y_pred) -> "Confusion":
        y_true = np.asarray(y_true, dtype=int)
        y_pred = np.asarray(y_pred, dtype=int)
        if y_true.shape != y_pred.shape:
            raise ValueError("label arrays must have equal length")
        return Confusion(
            tp=int(np.sum((y_true == 1) & (y_pred == 1))),
            fp=int(np.sum((y_true == 0) & (y_pred == 1))),
            tn=int(np.sum((y_true == 0) & (y_pred == 0))),
            fn=int(np.sum((y_true == 1) & (y_pred == 0))),
        )


def _recalls(c: Confusion) -> tuple[float, float]:
    """(sick recall, non-sick recall); an absent class contributes 0."""
    pos = c.tp + c.fn
    neg = c.tn + c.fp
    r_sick = c.tp / pos if pos else 0.0
    r_nonsick = c.tn / neg if neg else 0.0
    return r_sick, r_nonsick


def balanced_accuracy(c: Confusion) -> float:
    """Mean of per-class recall."""
    r_sick, r_nonsick = _recalls(c)
    return 0.5 * (r_sick + r_nonsick)


def f1_score(c: Confusion) -> float:
    """Harmonic mean of precision and recall; 0 when undefined."""
    denom = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / denom if denom else 0.0


def weighted_balanced_accuracy(c: Confusion, alpha: float = 0.7) -> float:
    """alpha * sick recall + (1 - alpha) * non-sick recall."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    r_sick, r_nonsick = _recalls(c)
    return alpha * r_sick + (1.0 - alpha) * r_nonsick

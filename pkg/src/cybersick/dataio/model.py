"""Dataset model: epoched ERP trials grouped by subject, plus LOSO fold plans."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# The 16 analyzed electrode sites. Names encode scalp position:
# R/L = right/left (L also lateral in second position), M = medial,
# D = dorsal, Mi = midline; Pf/Ce/Pa/Oc = prefrontal/center/parietal/occipital.
DEFAULT_CHANNELS = (
    "LDCe", "LDPa", "LLPf", "LMCe", "LMOc", "LMPf", "MiCe", "MiOc",
    "MiPa", "MiPf", "RDCe", "RDPa", "RLPf", "RMCe", "RMOc", "RMPf",
)

DEFAULT_SYMPTOM = "general discomfort"


class DatasetError(ValueError):
    """Structural problem in a dataset (shapes, labels, subjects)."""


@dataclass
class ErpEpoch:
    """One trial: a channels x time voltage matrix (microvolts) plus label."""

    subject_id: int
    trial_index: int
    signal: np.ndarray              # (C, T) float32 microvolts
    label: int                      # 0 non-sick, 1 sick
    symptom_scores: dict | None = None  # SSQ symptom -> 0..3

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float32)
        if self.signal.ndim != 2:
            raise DatasetError(f"signal must be (C, T), got {self.signal.shape}")
        if self.label not in (0, 1):
            raise DatasetError(f"label must be 0 or 1, got {self.label}")


@dataclass
class SubjectSet:
    """All epochs of one subject, with the shared channel naming."""

    subject_id: int
    epochs: list[ErpEpoch] = field(default_factory=list)
    channel_names: tuple = DEFAULT_CHANNELS

    def __post_init__(self):
        self.channel_names = tuple(self.channel_names)
        for e in self.epochs:
            if e.subject_id != self.subject_id:
                raise DatasetError(
                    f"epoch from subject {e.subject_id} in set {self.subject_id}")
            if e.signal.shape[0] != len(self.channel_names):
                raise DatasetError(
                    f"epoch has {e.signal.shape[0]} channels, "
                    f"expected {len(self.channel_names)}")

    @property
    def n_trials(self) -> int:
        return len(self.epochs)

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.epochs], dtype=int)

    def signals(self) -> np.ndarray:
        """(n, C, T) stack of all trials."""
        return np.stack([e.signal for e in self.epochs])

    def sick_fraction(self) -> float:
        return float(self.labels().mean()) if self.epochs else 0.0


@dataclass(frozen=True)
class FoldPlan:
    """Role assignment for one leave-one-subject-out fold."""

    test_subject: int
    validation_subject: int
    train_subjects: tuple
    seed: int

    def __post_init__(self):
        roles = {self.test_subject, self.validation_subject, *self.train_subjects}
        n = 2 + len(self.train_subjects)
        if self.test_subject == self.validation_subject or len(roles) != n:
            raise DatasetError("fold roles must be disjoint")


def check_geometry(subjects: list[SubjectSet]) -> tuple[int, int]:
    """Verify constant (C, T) across the dataset and return it."""
    shapes = {e.signal.shape for s in subjects for e in s.epochs}
    if len(shapes) > 1:
        raise DatasetError(f"inconsistent trial shapes: {sorted(shapes)}")
    if not shapes:
        raise DatasetError("dataset contains no trials")
    return shapes.pop()


def relabel(subjects: list[SubjectSet], symptom: str = DEFAULT_SYMPTOM) -> int:
    """Re-derive labels as (score > 0) for the chosen SSQ symptom.

    Returns how many labels changed. Requires every epoch to carry scores.
    """
    changed = 0
    for s in subjects:
        for e in s.epochs:
            if not e.symptom_scores or symptom not in e.symptom_scores:
                raise DatasetError(
                    f"subject {s.subject_id} trial {e.trial_index} has no "
                    f"score for {symptom!r}")
            new = 1 if e.symptom_scores[symptom] > 0 else 0
            if new != e.label:
                e.label = new
                changed += 1
    return changed

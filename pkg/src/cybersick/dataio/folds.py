"""Leave-one-subject-out fold planning and per-trial artifact rejection."""

from __future__ import annotations

import numpy as np

from .model import DatasetError, FoldPlan, SubjectSet


def reject_artifacts(subjects: list[SubjectSet], threshold_uv: float = 100.0):
    """Drop any trial whose absolute voltage exceeds the threshold (strict).

    Returns (kept subjects, number of rejected trials). Subject sets are
    rebuilt; the input is not mutated.
    """
    if threshold_uv <= 0:
        raise ValueError("threshold must be positive")
    kept, rejected = [], 0
    for s in subjects:
        good = [e for e in s.epochs
                if float(np.abs(e.signal).max()) <= threshold_uv]
        rejected += s.n_trials - len(good)
        kept.append(SubjectSet(subject_id=s.subject_id, epochs=good,
                               channel_names=s.channel_names))
    return kept, rejected


def fold_seed(base_seed: int, test_subject: int) -> int:
    """Stable per-fold seed derived from the experiment seed."""
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(test_subject,))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def plan_loso_folds(subjects: list[SubjectSet], seed: int) -> list[FoldPlan]:
    """One fold per subject as test; validation drawn uniformly from the rest."""
    ids = sorted(s.subject_id for s in subjects)
    if len(ids) != len(set(ids)):
        raise DatasetError("duplicate subject ids")
    if len(ids) < 3:
        raise DatasetError(f"LOSO needs at least 3 subjects, got {len(ids)}")
    plans = []
    for test in ids:
        derived = fold_seed(seed, test)
        rng = np.random.default_rng(derived)
        rest = [i for i in ids if i != test]
        val = int(rng.choice(rest))
        train = tuple(i for i in rest if i != val)
        plans.append(FoldPlan(test_subject=test, validation_subject=val,
                              train_subjects=train, seed=derived))
    return plans

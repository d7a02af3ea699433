"""Main-phase training: one model per LOSO fold with validation-based early
stopping on balanced accuracy.

`prepare_fold` owns the fixed conditioning order for a fold — outlier
removal on the train split, z-score normalization with train statistics,
class-balancing draw weights — so no validation or test trial can leak into
any fitted statistic or parameter update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import FoldPlan, SubjectSet
from .metrics import (
    Confusion,
    balanced_accuracy,
    f1_score,
    weighted_balanced_accuracy,
)
from .models import ArchConfig, build_model
from .nn import Adam, ModelGraph, Schedule, Tensor, clip_grad_norm, no_grad, softmax
from .preprocess import OutlierPolicy, drop_outliers, fit_normalizer, oversample_weights

LOG_CLAMP = 1e-12


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 64
    max_steps: int = 30_000
    eval_interval: int = 250
    patience: int = 10
    seed: int = 0
    clip_max_norm: float = 1.0        # transformers only
    milestones: tuple = (10_000, 20_000)
    lr_factor: float = 0.1

    def __post_init__(self):
        if min(self.batch_size, self.max_steps, self.eval_interval) <= 0:
            raise ValueError("batch size, steps and eval interval must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class EvalPoint:
    step: int
    loss: float
    val_ba: float


@dataclass
class RunRecord:
    evals: list[EvalPoint] = field(default_factory=list)
    best_step: int = 0
    best_ba: float = 0.0
    stopped_step: int = 0

    def as_rows(self):
        return [(e.step, e.loss, e.val_ba) for e in self.evals]


@dataclass
class FoldData:
    """Per-fold arrays after the conditioning pipeline, plus fitted state."""

    train_x: np.ndarray     # (n, 1, C, T) normalized
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    normalizer: object
    baseline: np.ndarray    # grand average of processed train trials (1, C, T)
    n_outliers_removed: int
    channel_names: tuple


def _stack(normalizer, epochs):
    x = normalizer.transform_epochs(epochs)
    y = np.array([e.label for e in epochs], dtype=int)
    return x[:, None, :, :], y


def prepare_fold(subjects: list[SubjectSet], fold: FoldPlan,
                 policy: OutlierPolicy = OutlierPolicy()) -> FoldData:
    """Conditioning order is fixed: outlier removal, then normalization;
    oversampling happens at batch-draw time inside train_fold."""
    by_id = {s.subject_id: s for s in subjects}
    train_epochs = [e for sid in fold.train_subjects for e in by_id[sid].epochs]
    train_epochs, n_removed = drop_outliers(train_epochs, policy)
    normalizer = fit_normalizer(train_epochs)
    train_x, train_y = _stack(normalizer, train_epochs)
    val_x, val_y = _stack(normalizer, by_id[fold.validation_subject].epochs)
    test_x, test_y = _stack(normalizer, by_id[fold.test_subject].epochs)
    return FoldData(
        train_x=train_x, train_y=train_y, val_x=val_x, val_y=val_y,
        test_x=test_x, test_y=test_y, normalizer=normalizer,
        baseline=train_x.mean(axis=0), n_outliers_removed=n_removed,
        channel_names=by_id[fold.test_subject].channel_names)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood over softmax probabilities; log arguments
    are clamped at 1e-12."""
    labels = np.asarray(labels, dtype=int)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    p = softmax(logits, axis=-1)
    p_true = (p * Tensor(onehot)).sum(axis=-1)
    return -(p_true.clamp_min(LOG_CLAMP).log().mean())


def evaluate(graph: ModelGraph, x: np.ndarray, y: np.ndarray,
             batch_size: int = 256):
    """Eval-mode confusion and metrics; logit ties resolve to label 0."""
    if x.shape[2:] != graph.input_shape[1:]:
        raise ValueError(f"data shape {x.shape[2:]} does not match model "
                         f"{graph.input_shape[1:]}")
    preds = np.empty(len(x), dtype=int)
    prev = graph.mode
    graph.eval()
    try:
        with no_grad():
            for lo in range(0, len(x), batch_size):
                logits = graph.forward(x[lo:lo + batch_size]).data
                # argmax returns the first (lowest) index on exact ties
                preds[lo:lo + batch_size] = np.argmax(logits, axis=1)
    finally:
        graph.mode = prev
    conf = Confusion.from_predictions(y, preds)
    return conf, {
        "balanced_accuracy": balanced_accuracy(conf),
        "f1": f1_score(conf),
        "weighted_balanced_accuracy": weighted_balanced_accuracy(conf),
        "class_absent": conf.class_absent,
    }


def train_fold(fold: FoldPlan, data: FoldData, arch_cfg: ArchConfig,
               cfg: TrainConfig) -> tuple[RunRecord, ModelGraph]:
    """Train one fold; returns the run record and the best-validation model."""
    if len(np.unique(data.train_y)) < 2:
        raise ValueError("training split has a single class")
    weights = oversample_weights(data.train_y)

    root = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(fold.seed,))
    batch_ss, model_ss = root.spawn(2)
    batch_rng = np.random.default_rng(batch_ss)
    model_seed = int(model_ss.generate_state(1, dtype=np.uint32)[0])

    graph = build_model(arch_cfg, seed=model_seed)
    schedule = Schedule(cfg.lr, "multistep", milestones=cfg.milestones,
                        factor=cfg.lr_factor)
    opt = Adam(schedule, weight_decay=cfg.weight_decay)
    clip = arch_cfg.arch == "conformer" and cfg.clip_max_norm > 0

    record = RunRecord()
    best_state = graph.state_dict()
    best_ba = -1.0
    bad_evals = 0
    n = len(data.train_x)

    def run_eval(step: int, loss_val: float) -> bool:
        nonlocal best_state, best_ba, bad_evals
        _, m = evaluate(graph, data.val_x, data.val_y)
        ba = m["balanced_accuracy"]
        record.evals.append(EvalPoint(step=step, loss=loss_val, val_ba=ba))
        if ba > best_ba:
            best_ba = ba
            best_state = graph.state_dict()
            record.best_step = step
            record.best_ba = ba
            bad_evals = 0
            return False
        bad_evals += 1
        return bad_evals >= cfg.patience

    run_eval(0, float("nan"))
    step = 0
    while step < cfg.max_steps:
        step += 1
        idx = batch_rng.choice(n, size=cfg.batch_size, replace=True, p=weights)
        graph.train()
        graph.zero_grad()
        loss = cross_entropy(graph.forward(data.train_x[idx]), data.train_y[idx])
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise TrainingDiverged(
                f"non-finite loss {loss_val} at step {step} "
                f"(fold test={fold.test_subject}, lr={schedule.lr_at(opt.step_count)})")
        loss.backward()
        if clip:
            clip_grad_norm(graph, cfg.clip_max_norm)
        opt.step(graph)
        if step % cfg.eval_interval == 0:
            if run_eval(step, loss_val):
                break

    record.stopped_step = step
    graph.load_state_dict(best_state)
    graph.eval()
    return record, graph

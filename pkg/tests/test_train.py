"""Training loop contracts: trainability, early stopping, determinism,
leakage, and evaluation conventions."""

import numpy as np
import pytest

from cybersick.dataio import SynthSpec, generate_synthetic, plan_loso_folds
from cybersick.models import ArchConfig, build_eegnet, build_model
from cybersick.nn import Adam, Schedule
from cybersick.train import (
    EvalPoint,
    FoldData,
    TrainConfig,
    TrainingDiverged,
    cross_entropy,
    evaluate,
    prepare_fold,
    train_fold,
)

MINI_EEGNET = ArchConfig(arch="eegnet", n_channels=8, n_samples=64,
                         temporal_kernel=16, separable_kernel=8, f1=4,
                         depth_multiplier=2, pool1=2, pool2=4)
MINI_CONFORMER = ArchConfig(arch="conformer", n_channels=8, n_samples=64,
                            patch_kernel=9, patch_pool=16, patch_pool_stride=8,
                            n_blocks=2, heads=2, hidden=16, ffn_expansion=2,
                            classifier_widths=(24, 12))


def mini_spec(**kw):
    base = dict(n_subjects=4, trials_per_subject=40, n_channels=8, n_samples=64,
                channel_names=("LLPf", "MiPf", "RDCe", "MiCe", "LDPa", "MiPa",
                               "LMOc", "MiOc"),
                discriminative=("LLPf",), effect_uv=8.0, noise_uv=1.0,
                subject_shift_uv=0.5, sick_fraction=0.4, seed=0)
    base.update(kw)
    return SynthSpec(**base)


def make_fold_data(spec=None, seed=0):
    subjects = generate_synthetic(spec or mini_spec())
    fold = plan_loso_folds(subjects, seed)[0]
    return subjects, fold, prepare_fold(subjects, fold)


class TestCrossEntropy:
    def test_symmetric_logits(self):
        from cybersick.nn import Tensor
        loss = cross_entropy(Tensor(np.zeros((1, 2))), [1])
        assert np.isclose(loss.item(), np.log(2.0))

    def test_perfect_prediction_near_zero(self):
        from cybersick.nn import Tensor
        logits = np.array([[30.0, -30.0], [-30.0, 30.0]])
        loss = cross_entropy(Tensor(logits), [0, 1])
        assert loss.item() < 1e-12

    def test_shift_invariance(self):
        from cybersick.nn import Tensor
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((5, 2))
        y = [0, 1, 1, 0, 1]
        a = cross_entropy(Tensor(logits), y).item()
        b = cross_entropy(Tensor(logits + 7.7), y).item()
        assert np.isclose(a, b)


class TestEvaluate:
    def test_zeroed_head_predicts_label0(self):
        g = build_eegnet(MINI_EEGNET, seed=0)
        g.params[-1]["weight"].data[...] = 0.0
        g.params[-1]["bias"].data[...] = 0.0
        x = np.random.default_rng(1).standard_normal((10, 1, 8, 64))
        y = np.array([0] * 5 + [1] * 5)
        conf, m = evaluate(g, x, y)
        assert conf.fn == 5 and conf.tn == 5 and conf.tp == 0 and conf.fp == 0
        assert m["balanced_accuracy"] == 0.5

    def test_repeatable(self):
        g = build_eegnet(MINI_EEGNET, seed=2)
        x = np.random.default_rng(3).standard_normal((12, 1, 8, 64))
        y = np.random.default_rng(4).integers(0, 2, 12)
        assert evaluate(g, x, y)[0] == evaluate(g, x, y)[0]

    def test_shape_mismatch_rejected(self):
        g = build_eegnet(MINI_EEGNET, seed=0)
        with pytest.raises(ValueError):
            evaluate(g, np.zeros((2, 1, 4, 64)), np.zeros(2, dtype=int))


class TestPrepareFold:
    def test_statistics_fit_on_train_only(self):
        subjects, fold, data = make_fold_data()
        # validation/test are transformed with train stats: their feature
        # means need not vanish, while the pooled train mean must
        assert abs(data.train_x.mean()) < 1e-12
        assert data.baseline.shape == (1, 8, 64)

    def test_test_split_untouched_by_outlier_removal(self):
        subjects, fold, data = make_fold_data()
        by_id = {s.subject_id: s for s in subjects}
        assert len(data.test_x) == by_id[fold.test_subject].n_trials

    def test_perturbing_test_trials_changes_nothing_upstream(self):
        subjects, fold, _ = make_fold_data()
        data1 = prepare_fold(subjects, fold)
        for e in subjects[fold.test_subject].epochs:
            e.signal = e.signal + np.float32(5.0)
        data2 = prepare_fold(subjects, fold)
        assert np.array_equal(data1.train_x, data2.train_x)
        assert np.array_equal(data1.normalizer.mu, data2.normalizer.mu)
        assert not np.array_equal(data1.test_x, data2.test_x)


class TestTrainFold:
    def overfit_config(self, **kw):
        base = dict(lr=3e-3, weight_decay=0.0, batch_size=16, max_steps=120,
                    eval_interval=40, patience=3, seed=0,
                    milestones=(10_000, 20_000))
        base.update(kw)
        return TrainConfig(**base)

    def test_overfit_one_batch_eegnet(self):
        # trainability check: loss on a memorized batch collapses
        subjects, fold, data = make_fold_data()
        small = FoldData(
            train_x=data.train_x[:16], train_y=data.train_y[:16],
            val_x=data.train_x[:16], val_y=data.train_y[:16],
            test_x=data.test_x, test_y=data.test_y,
            normalizer=data.normalizer, baseline=data.baseline,
            n_outliers_removed=0, channel_names=data.channel_names)
        cfg = self.overfit_config(batch_size=16, max_steps=500,
                                  eval_interval=100, patience=5)
        record, graph = train_fold(fold, small, MINI_EEGNET, cfg)
        assert min(e.loss for e in record.evals if np.isfinite(e.loss)) < 1e-3

    def test_overfit_one_batch_conformer(self):
        subjects, fold, data = make_fold_data()
        small = FoldData(
            train_x=data.train_x[:16], train_y=data.train_y[:16],
            val_x=data.train_x[:16], val_y=data.train_y[:16],
            test_x=data.test_x, test_y=data.test_y,
            normalizer=data.normalizer, baseline=data.baseline,
            n_outliers_removed=0, channel_names=data.channel_names)
        cfg = self.overfit_config(lr=1e-3, batch_size=16, max_steps=500,
                                  eval_interval=100, patience=5)
        record, graph = train_fold(fold, small, MINI_CONFORMER, cfg)
        assert min(e.loss for e in record.evals if np.isfinite(e.loss)) < 1e-3

    def test_lr_zero_keeps_initial_model(self):
        subjects, fold, data = make_fold_data()
        cfg = self.overfit_config(lr=0.0, max_steps=80, eval_interval=20,
                                  patience=2)
        record, graph = train_fold(fold, data, MINI_EEGNET, cfg)
        bas = [e.val_ba for e in record.evals]
        assert all(np.isclose(b, bas[0]) for b in bas)

    def test_determinism(self):
        subjects, fold, data = make_fold_data()
        cfg = self.overfit_config(max_steps=80, eval_interval=20)
        r1, g1 = train_fold(fold, data, MINI_EEGNET, cfg)
        r2, g2 = train_fold(fold, data, MINI_EEGNET, cfg)
        assert r1 == r2
        s1, s2 = g1.state_dict(), g2.state_dict()
        for k in s1:
            assert np.array_equal(s1[k], s2[k]), k

    def test_separable_synthetic_reaches_high_ba(self):
        subjects, fold, data = make_fold_data(mini_spec(
            n_subjects=4, trials_per_subject=60, seed=11))
        cfg = self.overfit_config(lr=1e-3, batch_size=32, max_steps=600,
                                  eval_interval=50, patience=5, seed=1)
        record, graph = train_fold(fold, data, MINI_EEGNET, cfg)
        assert record.best_ba >= 0.95
        conf, m = evaluate(graph, data.test_x, data.test_y)
        assert m["balanced_accuracy"] >= 0.9

    def test_best_checkpoint_is_max_over_evals(self):
        subjects, fold, data = make_fold_data()
        cfg = self.overfit_config(max_steps=120, eval_interval=30)
        record, _ = train_fold(fold, data, MINI_EEGNET, cfg)
        assert record.best_ba == max(e.val_ba for e in record.evals)
        assert record.best_ba >= record.evals[0].val_ba

    def test_single_class_train_split_rejected(self):
        subjects, fold, data = make_fold_data()
        bad = FoldData(
            train_x=data.train_x, train_y=np.zeros_like(data.train_y),
            val_x=data.val_x, val_y=data.val_y, test_x=data.test_x,
            test_y=data.test_y, normalizer=data.normalizer,
            baseline=data.baseline, n_outliers_removed=0,
            channel_names=data.channel_names)
        with pytest.raises(ValueError):
            train_fold(fold, bad, MINI_EEGNET, self.overfit_config())

    def test_nan_loss_aborts_with_diagnostic(self):
        subjects, fold, data = make_fold_data()
        poisoned = FoldData(
            train_x=np.where(np.isfinite(data.train_x), data.train_x, 0.0)
            * np.inf, train_y=data.train_y,
            val_x=data.val_x, val_y=data.val_y, test_x=data.test_x,
            test_y=data.test_y, normalizer=data.normalizer,
            baseline=data.baseline, n_outliers_removed=0,
            channel_names=data.channel_names)
        with pytest.raises(TrainingDiverged):
            train_fold(fold, poisoned, MINI_EEGNET, self.overfit_config())

    def test_leakage_test_trials_do_not_touch_parameters(self):
        spec = mini_spec(seed=21)
        subjects = generate_synthetic(spec)
        fold = plan_loso_folds(subjects, 3)[1]
        cfg = self.overfit_config(max_steps=60, eval_interval=20, patience=2)

        data1 = prepare_fold(subjects, fold)
        _, g1 = train_fold(fold, data1, MINI_EEGNET, cfg)

        for e in subjects[fold.test_subject].epochs:
            e.signal = e.signal + np.float32(3.0)  # stays under 100 uV
        data2 = prepare_fold(subjects, fold)
        _, g2 = train_fold(fold, data2, MINI_EEGNET, cfg)

        s1, s2 = g1.state_dict(), g2.state_dict()
        for k in s1:
            assert np.array_equal(s1[k], s2[k]), f"test-trial leak into {k}"

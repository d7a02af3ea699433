"""Architecture builders: shapes, parameter counts, full-graph gradients,
freezing, checkpoint round-trips."""

import numpy as np
import pytest

from cybersick.models import (
    ArchConfig,
    CheckpointError,
    build_conformer,
    build_eegnet,
    build_model,
    calibration_frozen_tags,
    load_checkpoint,
    save_checkpoint,
)
from cybersick.nn import Adam, Schedule, Tensor, fd_gradient_at, rel_error

TOL = 1e-5


def rand(*shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


class TestEegnet:
    def test_logit_shape(self):
        g = build_eegnet(ArchConfig(arch="eegnet", n_channels=16, n_samples=200))
        out = g.forward(rand(4, 1, 16, 200, seed=1))
        assert out.shape == (4, 2)

    def test_zeroed_head_gives_zero_logits(self):
        g = build_eegnet(ArchConfig(arch="eegnet"))
        g.params[-1]["weight"].data[...] = 0.0
        g.params[-1]["bias"].data[...] = 0.0
        g.eval()
        out = g.forward(rand(3, 1, 16, 200, seed=2))
        assert np.allclose(out.data, 0.0)

    def test_parameter_count_deterministic(self):
        cfg = ArchConfig(arch="eegnet", n_channels=16, n_samples=200,
                         f1=8, depth_multiplier=2)
        g = build_eegnet(cfg)
        # golden: conv(1x64)*8 + bn + spatial conv + bn + sep conv + point conv
        # + bn + linear head
        expected = (8 * 64) + (2 * 8) + (16 * 16 * 1) + (2 * 16) \
            + (16 * 16) + (16 * 16) + (2 * 16) + (16 * 6 * 2 + 2)
        assert g.n_parameters() == expected

    def test_temporal_kernel_must_fit(self):
        with pytest.raises(ValueError):
            build_eegnet(ArchConfig(arch="eegnet", n_samples=32))

    def test_shape_valid_over_cfg_range(self):
        for c in (4, 16, 64):
            for t in (64, 200, 512):
                g = build_eegnet(ArchConfig(arch="eegnet", n_channels=c,
                                            n_samples=t))
                assert g.forward(rand(1, 1, c, t, seed=3)).shape == (1, 2)


class TestConformer:
    def test_token_arithmetic_and_logits(self):
        cfg = ArchConfig(arch="conformer", n_channels=16, n_samples=200)
        g = build_conformer(cfg)
        # same padding keeps T=200; tokens = floor((200-75)/15)+1 = 9
        n_tokens = (200 - 75) // 15 + 1
        flat = next(s for s in g.layers if s.kind == "linear")
        assert flat.in_features == n_tokens * 40
        out = g.forward(rand(2, 1, 16, 200, seed=4))
        assert out.shape == (2, 2)

    def test_head_geometry(self):
        cfg = ArchConfig(arch="conformer")
        assert cfg.hidden == 40 and cfg.heads == 8
        assert cfg.hidden // cfg.heads == 5

    def test_three_fc_classifier(self):
        g = build_conformer(ArchConfig(arch="conformer"))
        n_linear = sum(1 for s in g.layers if s.kind == "linear")
        assert n_linear == 3

    def test_too_short_for_tokens(self):
        with pytest.raises(ValueError):
            build_conformer(ArchConfig(arch="conformer", n_samples=60,
                                       patch_kernel=25))

    def test_freezing_contract_through_step(self):
        cfg = ArchConfig(arch="conformer", n_samples=100, patch_pool=30,
                         patch_pool_stride=10)
        g = build_conformer(cfg, seed=5)
        g.freeze_tags(calibration_frozen_tags("conformer"))
        frozen_before = {
            n: p.data.copy() for n, p in g.named_parameters()
            if not p.requires_grad}
        assert frozen_before

        x = rand(4, 1, 16, 100, seed=6)
        y = np.array([0, 1, 0, 1])
        opt = Adam(Schedule(1e-2), weight_decay=1e-4)
        from cybersick.train import cross_entropy
        for _ in range(2):
            g.zero_grad()
            logits = g.forward(x)
            loss = cross_entropy(logits, y)
            loss.backward()
            opt.step(g)
        for n, p in g.named_parameters():
            if n in frozen_before:
                assert np.array_equal(p.data, frozen_before[n]), n

    def test_frozen_tags_for_archs(self):
        assert calibration_frozen_tags("eegnet") == []
        assert calibration_frozen_tags("conformer") == [
            "encoder1", "encoder2", "encoder3"]


def graph_fd_check(graph, x, y, n_coords=3, tol=TOL, seed=0):
    """Spot-check input + every parameter tensor against finite differences."""
    from cybersick.train import cross_entropy

    rng = np.random.default_rng(seed)
    graph.train()

    def loss_value():
        graph.reset_rng(123)  # replay identical dropout masks
        return cross_entropy(graph.forward(Tensor(x)), y).item()

    graph.zero_grad()
    graph.reset_rng(123)
    xt = Tensor(x, requires_grad=True)
    loss = cross_entropy(graph.forward(xt), y)
    loss.backward()

    checks = [("input", xt.grad, x, None)]
    for name, p in graph.named_parameters(trainable_only=True):
        checks.append((name, p.grad, p.data, p))

    for name, analytic, arr, param in checks:
        assert analytic is not None, f"{name}: no gradient"
        k = min(n_coords, arr.size)
        idx = rng.choice(arr.size, size=k, replace=False)

        def f(a, param=param):
            if param is None:
                return_val = None
                old = x.copy()
                x[...] = a
                val = loss_value()
                x[...] = old
                return val
            old = param.data.copy()
            param.data[...] = a
            val = loss_value()
            param.data[...] = old
            return val

        num = fd_gradient_at(f, arr if param is None else param.data, idx)
        err = rel_error(analytic.reshape(-1)[idx], num)
        assert err < tol, f"{name}: rel err {err:.2e}"


class TestFullGraphGradients:
    def test_eegnet_miniature(self):
        cfg = ArchConfig(arch="eegnet", n_channels=4, n_samples=32,
                         temporal_kernel=8, separable_kernel=4, f1=2,
                         depth_multiplier=2, pool1=2, pool2=2, dropout=0.25)
        g = build_eegnet(cfg, seed=7)
        x = rand(4, 1, 4, 32, seed=8)
        y = np.array([0, 1, 1, 0])
        graph_fd_check(g, x, y)

    def test_conformer_miniature(self):
        cfg = ArchConfig(arch="conformer", n_channels=4, n_samples=32,
                         patch_kernel=7, patch_pool=8, patch_pool_stride=6,
                         n_blocks=2, heads=2, hidden=8, ffn_expansion=2,
                         classifier_widths=(10, 6), dropout=0.25)
        g = build_conformer(cfg, seed=9)
        x = rand(4, 1, 4, 32, seed=10)
        y = np.array([1, 0, 1, 0])
        graph_fd_check(g, x, y)


class TestCheckpoints:
    def test_roundtrip_bit_exact(self, tmp_path):
        cfg = ArchConfig(arch="eegnet", n_channels=4, n_samples=64,
                         temporal_kernel=16, separable_kernel=8, f1=4,
                         depth_multiplier=2)
        g = build_eegnet(cfg, seed=11)
        # make running stats non-trivial
        g.forward(rand(8, 1, 4, 64, seed=12))
        p = tmp_path / "model.ckpt"
        save_checkpoint(g, p, step=123, metric=0.875)
        loaded, header = load_checkpoint(p)
        assert header["step"] == 123 and header["metric"] == 0.875
        assert header["arch"] == "eegnet"
        a, b = g.state_dict(), loaded.state_dict()
        assert set(a) == set(b)
        for k in a:
            assert np.array_equal(a[k], b[k]), k

    def test_save_is_deterministic(self, tmp_path):
        g = build_eegnet(ArchConfig(arch="eegnet", n_channels=4, n_samples=64,
                                    temporal_kernel=16), seed=13)
        save_checkpoint(g, tmp_path / "a.ckpt", step=1, metric=0.5)
        save_checkpoint(g, tmp_path / "b.ckpt", step=1, metric=0.5)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_bad_file_rejected(self, tmp_path):
        p = tmp_path / "x.ckpt"
        p.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_frozen_layers_survive_roundtrip(self, tmp_path):
        cfg = ArchConfig(arch="conformer", n_samples=100, patch_pool=30,
                         patch_pool_stride=10)
        g = build_conformer(cfg, seed=14)
        g.freeze_tags(["encoder1"])
        save_checkpoint(g, tmp_path / "c.ckpt")
        loaded, _ = load_checkpoint(tmp_path / "c.ckpt")
        assert loaded.frozen == g.frozen

    def test_cfg_hash_stable(self):
        a = ArchConfig(arch="eegnet").cfg_hash()
        b = ArchConfig(arch="eegnet").cfg_hash()
        c = ArchConfig(arch="eegnet", f1=16).cfg_hash()
        assert a == b and a != c


class TestBuildDispatch:
    def test_build_model(self):
        assert build_model(ArchConfig(arch="eegnet")).arch == "eegnet"
        assert build_model(ArchConfig(arch="conformer")).arch == "conformer"

    def test_unknown_arch(self):
        with pytest.raises(ValueError):
            ArchConfig(arch="vit")

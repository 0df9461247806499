import numpy as np
import pytest

from compdistill import losses as L
from compdistill.errors import ConfigError, DimensionError, FormatError, TrainingDivergedError
from compdistill.gradcheck import check_network
from compdistill.nn import (ArchSpec, OptimConfig, accuracy, backward, forward, init_network,
                            load_checkpoint, save_checkpoint, sgd_step)
from compdistill.tensor import softmax_rows

MLP = ArchSpec("mlp", (8,), (16,), 4)
CNN = ArchSpec("smallcnn", (2, 6, 6), (3, 4, 10), 5)


def _jitter(net, seed=0):
    rng = np.random.default_rng(seed)
    net.params = [p + 0.1 * rng.standard_normal(p.shape) for p in net.params]
    return net


class TestArchSpec:
    def test_zero_hidden_layers(self):
        with pytest.raises(ConfigError):
            ArchSpec("mlp", (8,), (), 4)

    def test_logit_layer_cannot_be_feature_layer(self):
        with pytest.raises(ConfigError):
            ArchSpec("mlp", (8,), (16, 12), 4, feature_layer=2)

    def test_needs_two_classes(self):
        with pytest.raises(ConfigError):
            ArchSpec("mlp", (8,), (16,), 1)

    def test_default_feature_is_penultimate(self):
        a = ArchSpec("mlp", (8,), (16, 12), 4)
        assert a.feature_index == 1 and a.feature_width == 12
        assert CNN.feature_index == 2 and CNN.feature_width == 10

    def test_dict_round_trip(self):
        assert ArchSpec.from_dict(CNN.to_dict()) == CNN


class TestInit:
    def test_same_seed_same_checksum(self):
        assert init_network(MLP, 7).checksum() == init_network(MLP, 7).checksum()

    def test_different_seeds_differ(self):
        assert init_network(MLP, 7).checksum() != init_network(MLP, 8).checksum()

    def test_momentum_zeroed(self):
        net = init_network(CNN, 0)
        assert all(not m.any() for m in net.momentum)
        assert [m.shape for m in net.momentum] == [p.shape for p in net.params]


class TestForward:
    def test_probs_rows_sum_to_one(self):
        rec = forward(init_network(MLP, 0), np.random.default_rng(0).standard_normal((5, 8)))
        np.testing.assert_allclose(rec.probs.sum(axis=1), 1.0, atol=1e-12)

    def test_hand_set_weights(self):
        arch = ArchSpec("mlp", (2,), (2,), 2)
        net = init_network(arch, 0)
        net.params = [np.eye(2), np.array([1.0, 1.0]), np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.5, -0.5])]
        rec = forward(net, np.array([[1.0, 2.0]]))
        # hidden = [2, 3]; logits = [2 + 9 + 0.5, 4 + 12 - 0.5]
        np.testing.assert_allclose(rec.logits, [[11.5, 15.5]], rtol=0, atol=1e-14)
        np.testing.assert_allclose(rec.feature, [[2.0, 3.0]])

    @pytest.mark.parametrize("arch", [MLP, CNN], ids=["mlp", "cnn"])
    def test_batch_independence(self, arch):
        net = _jitter(init_network(arch, 0))
        x = np.random.default_rng(1).standard_normal((6,) + arch.input_shape)
        full = forward(net, x).logits
        single = forward(net, x[2:3]).logits
        # BLAS may sum in a different order for a one-row batch
        np.testing.assert_allclose(single[0], full[2], rtol=0, atol=1e-12)

    def test_deterministic(self):
        net = init_network(CNN, 0)
        x = np.random.default_rng(1).standard_normal((4, 2, 6, 6))
        assert forward(net, x).logits.tobytes() == forward(net, x).logits.tobytes()

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            forward(init_network(MLP, 0), np.zeros((3, 7)))

    @pytest.mark.parametrize("arch", [MLP, CNN, ArchSpec("mlp", (8,), (16, 6), 3, feature_layer=0)])
    def test_feature_width(self, arch):
        x = np.random.default_rng(0).standard_normal((3,) + arch.input_shape)
        assert forward(init_network(arch, 0), x).feature.shape == (3, arch.feature_width)

    def test_image_input_is_flattened_for_mlp(self):
        arch = ArchSpec("mlp", (1, 4, 4), (8,), 3)
        rec = forward(init_network(arch, 0), np.zeros((2, 1, 4, 4)))
        assert rec.logits.shape == (2, 3)


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        net = init_network(CNN, 0)
        rec = forward(net, np.random.default_rng(0).standard_normal((3, 2, 6, 6)))
        grads = backward(net, rec, np.zeros_like(rec.logits), np.zeros_like(rec.feature))
        assert all(not g.any() for g in grads)

    @pytest.mark.parametrize("arch", [MLP, CNN], ids=["mlp", "cnn"])
    def test_feature_grad_only_leaves_logit_layer_untouched(self, arch):
        net = init_network(arch, 0)
        rec = forward(net, np.random.default_rng(0).standard_normal((3,) + arch.input_shape))
        grads = backward(net, rec, np.zeros_like(rec.logits), np.ones_like(rec.feature))
        assert not grads[-1].any() and not grads[-2].any()
        assert any(g.any() for g in grads[:-2])

    def test_shape_mismatch(self):
        net = init_network(MLP, 0)
        rec = forward(net, np.zeros((3, 8)))
        with pytest.raises(DimensionError):
            backward(net, rec, np.zeros((3, 5)))
        with pytest.raises(DimensionError):
            backward(net, rec, np.zeros((3, 4)), np.zeros((3, 15)))

    @pytest.mark.parametrize("arch", [
        MLP,
        ArchSpec("mlp", (8,), (16, 12), 4, feature_layer=0),
        ArchSpec("mlp", (8,), (10, 9, 7), 3),
        CNN,
        ArchSpec("smallcnn", (2, 6, 6), (3, 4, 10), 5, feature_layer=0),
        ArchSpec("smallcnn", (2, 6, 6), (3, 4, 10), 5, feature_layer=1),
    ], ids=["mlp", "mlp-f0", "mlp-deep", "cnn", "cnn-f0", "cnn-f1"])
    def test_losses_match_finite_differences(self, arch):
        rng = np.random.default_rng(5)
        net = _jitter(init_network(arch, 1), 2)
        bsz = 4
        x = rng.standard_normal((bsz,) + arch.input_shape)
        y = softmax_rows(rng.standard_normal((bsz, arch.num_classes)))
        p_t = softmax_rows(rng.standard_normal((bsz, arch.num_classes)))
        f_t = rng.standard_normal((bsz, arch.feature_width))
        errs = check_network(net, x, y, p_t, f_t, rng, n_probes=120)
        assert max(errs.values()) < 1e-4, errs

    def test_composite_gradient_is_sum_of_parts(self):
        rng = np.random.default_rng(0)
        net = init_network(MLP, 0)
        x = rng.standard_normal((5, 8))
        rec = forward(net, x)
        y = L.one_hot(rng.integers(4, size=5), 4)
        g1 = backward(net, rec, L.cross_entropy(rec.probs, y)[1])
        g2 = backward(net, rec, np.zeros_like(rec.logits), np.ones_like(rec.feature))
        g12 = backward(net, rec, L.cross_entropy(rec.probs, y)[1], np.ones_like(rec.feature))
        for a, b, c in zip(g1, g2, g12):
            np.testing.assert_allclose(a + b, c, atol=1e-14)


class TestSgd:
    def test_plain_sgd(self):
        net = init_network(MLP, 0)
        grads = [np.full_like(p, 0.5) for p in net.params]
        cfg = OptimConfig(learning_rate=0.2, momentum=0.0, weight_decay=0.0)
        new = sgd_step(net, grads, cfg)
        for p, q in zip(net.params, new.params):
            np.testing.assert_array_equal(q, p - 0.2 * 0.5)

    def test_zero_grads_keep_params(self):
        net = init_network(MLP, 0)
        new = sgd_step(net, [np.zeros_like(p) for p in net.params], OptimConfig(weight_decay=0.0))
        for p, q in zip(net.params, new.params):
            np.testing.assert_array_equal(p, q)

    def test_identical_nets_identical_updates(self):
        a, b = init_network(MLP, 3), init_network(MLP, 3)
        grads = [np.random.default_rng(0).standard_normal(p.shape) for p in a.params]
        a2, b2 = sgd_step(a, grads, OptimConfig()), sgd_step(b, grads, OptimConfig())
        assert a2.checksum() == b2.checksum()

    def test_nesterov_hand_values(self):
        arch = ArchSpec("mlp", (1,), (1,), 2)
        net = init_network(arch, 0)
        net.params = [np.ones_like(p) for p in net.params]
        cfg = OptimConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
        g = [np.full_like(p, 2.0) for p in net.params]
        # v' = -0.2, theta' = 1 + 0.9 * -0.2 - 0.2 = 0.62
        net = sgd_step(net, g, cfg)
        np.testing.assert_allclose(net.params[0], 0.62, rtol=1e-15)
        # v'' = 0.9 * -0.2 - 0.2 = -0.38, theta'' = 0.62 - 0.342 - 0.2 = 0.078
        net = sgd_step(net, g, cfg)
        np.testing.assert_allclose(net.params[0], 0.078, rtol=1e-12)

    def test_weight_decay_added_to_gradient(self):
        arch = ArchSpec("mlp", (1,), (1,), 2)
        net = init_network(arch, 0)
        net.params = [np.full_like(p, 2.0) for p in net.params]
        cfg = OptimConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.5)
        new = sgd_step(net, [np.zeros_like(p) for p in net.params], cfg)
        np.testing.assert_allclose(new.params[0], 2.0 - 0.1 * 0.5 * 2.0)

    def test_non_finite_gradient(self):
        net = init_network(MLP, 0, net_id=3)
        grads = [np.zeros_like(p) for p in net.params]
        grads[1][0] = np.nan
        with pytest.raises(TrainingDivergedError, match="net 3.*iteration 17") as info:
            sgd_step(net, grads, OptimConfig(), iteration=17)
        assert info.value.net_id == 3 and info.value.iteration == 17

    def test_original_state_untouched(self):
        net = init_network(MLP, 0)
        before = net.checksum()
        sgd_step(net, [np.ones_like(p) for p in net.params], OptimConfig())
        assert net.checksum() == before


class TestSchedule:
    def test_default_steps(self):
        cfg = OptimConfig()
        assert cfg.lr_at(0.0) == 0.1
        assert cfg.lr_at(0.49) == 0.1
        assert cfg.lr_at(0.5) == pytest.approx(0.01)
        assert cfg.lr_at(0.8) == pytest.approx(0.001)

    def test_multiplier_of_last_point_at_or_before(self):
        cfg = OptimConfig(learning_rate=1.0, lr_schedule=((0.2, 0.5), (0.6, 0.25)))
        assert [cfg.lr_at(f) for f in (0.0, 0.2, 0.59, 0.6, 1.0)] == [1.0, 0.5, 0.5, 0.25, 0.25]

    def test_increasing_multipliers_rejected(self):
        with pytest.raises(ConfigError):
            OptimConfig(lr_schedule=((0.0, 0.1), (0.5, 1.0)))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        nets = [init_network(MLP, 0, net_id=0), init_network(CNN, 1, net_id=1)]
        path = tmp_path / "ck.zip"
        save_checkpoint(path, nets, extra={"strategy": "competitive"})
        loaded, manifest = load_checkpoint(path)
        assert manifest["format_version"] == 1 and manifest["extra"]["strategy"] == "competitive"
        for a, b in zip(nets, loaded):
            assert a.arch == b.arch and a.net_id == b.net_id
            for p, q in zip(a.params, b.params):
                np.testing.assert_array_equal(p.astype("<f4"), q.astype("<f4"))
        assert not list(tmp_path.glob("*.tmp"))

    def test_float32_little_endian_payload(self, tmp_path):
        import json
        import zipfile

        net = init_network(MLP, 0)
        save_checkpoint(tmp_path / "ck.zip", [net])
        with zipfile.ZipFile(tmp_path / "ck.zip") as zf:
            manifest = json.loads(zf.read("manifest.json"))
            entry = manifest["networks"][0]["params"][0]
            raw = zf.read(entry["file"])
        assert len(raw) == 4 * 8 * 16 and entry["shape"] == [8, 16]
        np.testing.assert_array_equal(np.frombuffer(raw, "<f4").reshape(8, 16), net.params[0].astype(np.float32))

    def test_garbage_rejected(self, tmp_path):
        p = tmp_path / "bad.zip"
        p.write_bytes(b"not a zip")
        with pytest.raises(FormatError):
            load_checkpoint(p)


def test_accuracy_percent():
    arch = ArchSpec("mlp", (2,), (2,), 2)
    net = init_network(arch, 0)
    net.params = [np.eye(2), np.zeros(2), np.eye(2), np.zeros(2)]
    x = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [0.0, 3.0]])
    assert accuracy(net, x, np.array([0, 1, 1, 1])) == 75.0

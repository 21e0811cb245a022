"""End-to-end model contracts: shapes, determinism, gradients, loss algebra."""

import numpy as np
import pytest

from pressnet import tensor
from pressnet.errors import ConfigError, ShapeError, UsageError
from pressnet.model import ModelConfig, PostureNet

from util import max_rel_err


def tiny_config(**overrides):
    """Smallest config whose shape arithmetic closes on a 29x29 input."""
    base = dict(num_subjects=2, num_postures=3, conv_channels=(1, 1, 2, 2),
                dense_width=4, conv_dropout=(0.0, 0.0, 0.0, 0.0),
                dense_dropout=0.0, input_hw=(29, 29))
    base.update(overrides)
    return ModelConfig(**base)


def make_batch(rng, config, n):
    x = rng.random(size=(n, 1, *config.input_hw))
    yu = rng.integers(0, config.num_subjects, size=n)
    yp = rng.integers(0, config.num_postures, size=n)
    return x, yu, yp


class TestConfig:
    def test_default_feature_shapes(self):
        cfg = ModelConfig(num_subjects=13, num_postures=17)
        assert cfg.feature_shapes() == [(30, 62), (14, 30), (12, 28),
                                        (5, 13), (3, 11), (1, 9)]
        assert cfg.flat_features == 128 * 1 * 9

    def test_too_small_input_fails_at_build(self):
        cfg = ModelConfig(num_subjects=2, num_postures=2, input_hw=(16, 16))
        with pytest.raises(ConfigError):
            PostureNet(cfg, tensor.make_rng(0))

    def test_invalid_ranges(self):
        with pytest.raises(ConfigError):
            ModelConfig(num_subjects=1, num_postures=3)
        with pytest.raises(ConfigError):
            ModelConfig(num_subjects=2, num_postures=2, dense_dropout=1.0)
        with pytest.raises(ConfigError):
            ModelConfig(num_subjects=2, num_postures=2, leaky_slope=0.0)


class TestForward:
    def test_output_shapes_and_normalization(self):
        cfg = ModelConfig(num_subjects=13, num_postures=17,
                          conv_channels=(2, 2, 4, 4), dense_width=8)
        net = PostureNet(cfg, tensor.make_rng(40))
        rng = tensor.make_rng(41)
        x = rng.random(size=(2, 1, 32, 64)).astype(np.float32)
        pu, pp = net.forward(x)
        assert pu.shape == (2, 13) and pp.shape == (2, 17)
        assert np.allclose(pu.sum(axis=1), 1.0, atol=1e-6)
        assert np.allclose(pp.sum(axis=1), 1.0, atol=1e-6)

    def test_infer_mode_is_deterministic(self):
        cfg = tiny_config()
        net = PostureNet(cfg, tensor.make_rng(42), dtype=np.float64)
        x, _, _ = make_batch(tensor.make_rng(43), cfg, 3)
        a = net.forward(x)
        b = net.forward(x)
        assert a[0].tobytes() == b[0].tobytes()
        assert a[1].tobytes() == b[1].tobytes()

    def test_wrong_input_shape(self):
        net = PostureNet(tiny_config(), tensor.make_rng(44))
        with pytest.raises(ShapeError):
            net.forward(np.ones((2, 1, 16, 16)))


class TestBackward:
    def test_requires_train_forward(self):
        cfg = tiny_config()
        net = PostureNet(cfg, tensor.make_rng(45), dtype=np.float64)
        x, yu, yp = make_batch(tensor.make_rng(46), cfg, 2)
        pu, pp = net.forward(x, train=False)
        with pytest.raises(UsageError):
            net.backward(pu, pp, yu, yp, 0.5)

    def test_lambda_zero_subject_head_gets_only_l2(self):
        cfg = tiny_config(l2_sigma=0.002)
        net = PostureNet(cfg, tensor.make_rng(47), dtype=np.float64)
        x, yu, yp = make_batch(tensor.make_rng(48), cfg, 4)
        pu, pp = net.forward(x, train=True, rng=tensor.make_rng(49))
        grads = net.backward(pu, pp, yu, yp, 0.0)
        w = net.params()["head_subject.w"]
        assert np.array_equal(grads["head_subject.w"], 2 * 0.002 * w)
        assert np.array_equal(grads["head_subject.b"], np.zeros_like(grads["head_subject.b"]))

    def test_lambda_one_invariant_to_posture_permutation(self):
        cfg = tiny_config()
        rng_labels = tensor.make_rng(50)
        x, yu, yp = make_batch(rng_labels, cfg, 4)
        perm = rng_labels.permutation(cfg.num_postures)

        def grads_with(posture_labels):
            net = PostureNet(cfg, tensor.make_rng(51), dtype=np.float64)
            pu, pp = net.forward(x, train=True, rng=tensor.make_rng(52))
            return net.backward(pu, pp, yu, posture_labels, 1.0)

        g1 = grads_with(yp)
        g2 = grads_with(perm[yp])
        for key in g1:
            assert np.array_equal(g1[key], g2[key]), key

    def test_lambda_zero_invariant_to_subject_permutation(self):
        cfg = tiny_config()
        rng_labels = tensor.make_rng(53)
        x, yu, yp = make_batch(rng_labels, cfg, 4)
        perm = rng_labels.permutation(cfg.num_subjects)

        def grads_with(subject_labels):
            net = PostureNet(cfg, tensor.make_rng(54), dtype=np.float64)
            pu, pp = net.forward(x, train=True, rng=tensor.make_rng(55))
            return net.backward(pu, pp, subject_labels, yp, 0.0)

        g1 = grads_with(yu)
        g2 = grads_with(perm[yu])
        for key in g1:
            assert np.array_equal(g1[key], g2[key]), key

    def test_duplicated_batch_keeps_mean_gradient(self):
        cfg = tiny_config()
        x, yu, yp = make_batch(tensor.make_rng(56), cfg, 3)
        x2 = np.concatenate([x, x]); yu2 = np.concatenate([yu, yu])
        yp2 = np.concatenate([yp, yp])

        def grads_for(xb, yub, ypb):
            net = PostureNet(cfg, tensor.make_rng(57), dtype=np.float64)
            pu, pp = net.forward(xb, train=True)
            return net.backward(pu, pp, yub, ypb, 0.5)

        g1 = grads_for(x, yu, yp)
        g2 = grads_for(x2, yu2, yp2)
        for key in g1:
            # conv biases under train-mode batch norm have true gradient 0,
            # so compare with an absolute floor at roundoff scale
            scale = max(np.max(np.abs(g1[key])), np.max(np.abs(g2[key])))
            diff = np.max(np.abs(g1[key] - g2[key]))
            assert diff <= 1e-12 + 1e-8 * scale, key

    def test_full_finite_difference_small(self):
        # a fast whole-model gradient check; the acceptance suite runs the
        # larger 2/2/4/4 configuration
        cfg = tiny_config()
        net = PostureNet(cfg, tensor.make_rng(58), dtype=np.float64)
        x, yu, yp = make_batch(tensor.make_rng(59), cfg, 2)
        lam = 0.4

        def total_loss():
            pu, pp = net.forward(x, train=True)
            return net.loss(pu, pp, yu, yp, lam)[0]

        pu, pp = net.forward(x, train=True)
        grads = net.backward(pu, pp, yu, yp, lam)
        h = 1e-6
        worst = 0.0
        for key, p in net.params().items():
            flat = p.reshape(-1)
            idx = [0, flat.size // 2, flat.size - 1]
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = total_loss()
                flat[i] = orig - h
                fm = total_loss()
                flat[i] = orig
                fd = (fp - fm) / (2 * h)
                a = grads[key].reshape(-1)[i]
                # floor 1e-5: central differences on an O(1) float64 loss
                # carry ~1e-10 noise, and conv-bias gradients under batch
                # norm are exactly zero
                err = abs(a - fd) / max(abs(a), abs(fd), 1e-5)
                worst = max(worst, err)
        assert worst <= 1e-4


class TestLoss:
    def test_loss_includes_l2(self):
        cfg = tiny_config(l2_sigma=0.01)
        net = PostureNet(cfg, tensor.make_rng(60), dtype=np.float64)
        x, yu, yp = make_batch(tensor.make_rng(61), cfg, 2)
        pu, pp = net.forward(x)
        total, lu, lp, l2 = net.loss(pu, pp, yu, yp, 0.5)
        assert l2 > 0.0
        assert total == pytest.approx(0.5 * lu + 0.5 * lp + l2)

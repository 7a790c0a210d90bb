import numpy as np
import pytest

from splatfeat import FeatureMap, ValidationError, make_scene
from splatfeat.adapter import (CHECKS, DivergenceError, FusionParams,
                               MultiScaleConfig, PEConfig, ScaleSpec,
                               adaptive_fuse, bilinear_resize, build_toy_task,
                               feature_loss, gs_pe, identity_multiscale,
                               identity_naive_params, init_multiscale,
                               init_params, load_params, multiscale_aggregate,
                               multiscale_scatter, naive_fuse, refine,
                               save_params, sinusoidal_encode, toy_train,
                               zero_gate_params)
from splatfeat.rasterizer import DominantMap


class TestGsPe:
    def dominant(self, ids, weights):
        return DominantMap(np.asarray(ids, dtype=np.int32),
                           np.asarray(weights, dtype=np.float64))

    def test_zero_input_pattern(self):
        # gamma(0) alternates (sin 0, cos 0) = (0, 1, 0, 1, ...).
        enc = sinusoidal_encode(np.zeros(1), d_prime=8, omega0=10000.0)[0]
        np.testing.assert_array_equal(enc, [0, 1, 0, 1, 0, 1, 0, 1])

    def test_first_pair_unit_frequency(self):
        # k = 0: omega = 1, so the leading pair is (sin v, cos v).
        v = np.array([0.37])
        enc = sinusoidal_encode(v, d_prime=6, omega0=10000.0)[0]
        assert enc[0] == np.sin(0.37)
        assert enc[1] == np.cos(0.37)

    def test_channel_budget(self):
        # C = 64 -> D' = 16 per encoded scalar, 4 scalars fill C exactly.
        scene = make_scene([[0.2, 0.3, 0.4], [0.8, 0.6, 0.1]])
        g = FeatureMap("v", np.zeros((4, 4, 64)))
        dom = self.dominant(np.zeros((4, 4)), np.full((4, 4), 0.5))
        out = gs_pe(g, dom, scene)
        assert out.data.shape == (4, 4, 64)

    def test_additive_on_rendered(self):
        scene = make_scene([[0.2, 0.3, 0.4], [0.8, 0.6, 0.1]])
        rng = np.random.default_rng(0)
        base = rng.normal(size=(3, 3, 8))
        dom = self.dominant(rng.integers(0, 2, (3, 3)), rng.uniform(0, 1, (3, 3)))
        out0 = gs_pe(FeatureMap("v", np.zeros((3, 3, 8))), dom, scene)
        out1 = gs_pe(FeatureMap("v", base), dom, scene)
        np.testing.assert_allclose(out1.data - base, out0.data, atol=1e-12)

    def test_sentinel_pixels_encode_zero(self):
        scene = make_scene([[0.5, 0.5, 0.5]])
        dom = self.dominant(np.full((2, 2), -1), np.zeros((2, 2)))
        out = gs_pe(FeatureMap("v", np.zeros((2, 2, 8))), dom, scene)
        expected = np.tile(sinusoidal_encode(np.zeros(1), 2, 10000.0)[0], 4)
        np.testing.assert_array_equal(out.data[0, 0], expected)

    def test_normalized_coordinates(self):
        scene = make_scene([[0.0, 0.0, 0.0], [2.0, 4.0, 8.0]])
        dom = self.dominant([[1]], [[0.25]])
        out = gs_pe(FeatureMap("v", np.zeros((1, 1, 8))), dom, scene)
        # Gaussian 1 sits at the bbox max -> normalized center (1,1,1).
        enc1 = sinusoidal_encode(np.ones(1), 2, 10000.0)[0]
        np.testing.assert_allclose(out.data[0, 0, :2], enc1, atol=1e-12)

    def test_bad_channel_count(self):
        scene = make_scene([[0, 0, 0.0]])
        dom = self.dominant([[0]], [[1.0]])
        with pytest.raises(ValidationError, match="divisible by 4"):
            gs_pe(FeatureMap("v", np.zeros((1, 1, 6))), dom, scene)


class TestRefine:
    def test_zero_blocks_identity(self):
        params = init_params(8, depth=4, seed=0)
        for blk in params.refine_blocks:
            blk.conv_w = np.zeros_like(blk.conv_w)
            blk.gamma = np.zeros_like(blk.gamma)
            blk.beta = np.zeros_like(blk.beta)
        x = np.random.default_rng(1).normal(size=(5, 7, 8))
        out, _ = refine(x, params)
        np.testing.assert_array_equal(out, x)

    def test_default_depth_is_four(self):
        assert init_params(8).depth == 4

    def test_finite_on_perturbation(self):
        rng = np.random.default_rng(2)
        params = init_params(8, depth=4, seed=3)
        x = rng.normal(size=(6, 6, 8))
        out0, _ = refine(x, params)
        eps = 1e-4
        out1, _ = refine(x + eps * rng.normal(size=x.shape), params)
        assert np.isfinite(out1).all()
        # Empirical local Lipschitz bound stays finite and modest.
        ratio = np.abs(out1 - out0).max() / eps
        assert ratio < 1e3


class TestFeatureLoss:
    def test_identical_zero(self):
        rng = np.random.default_rng(3)
        f = rng.normal(size=(2, 4, 4, 8))
        loss, grad, count = feature_loss(f.copy(), f)
        # cos(g, g) is 1 only to rounding, so the loss floor is ~1e-16.
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.abs(grad).max() < 1e-9
        assert count == 0

    def test_opposite_is_two(self):
        rng = np.random.default_rng(4)
        f = rng.normal(size=(4, 4, 8))
        loss, _, _ = feature_loss(-f, f)
        assert loss == pytest.approx(2.0, abs=1e-12)

    def test_zero_norm_convention(self):
        f = np.zeros((1, 1, 4))
        t = np.ones((1, 1, 4))
        loss, grad, count = feature_loss(f, t)
        assert loss == 1.0
        assert count == 1
        assert not grad.any()


class TestFusionIdentities:
    def test_naive_constructed_identity_bitwise(self):
        params = identity_naive_params(init_params(8, seed=5))
        rng = np.random.default_rng(6)
        f = rng.normal(size=(4, 4, 8))
        g = rng.normal(size=(4, 4, 8))
        out, _ = naive_fuse(f, g, params)
        np.testing.assert_array_equal(out, f)

    def test_naive_zero_weights(self):
        params = init_params(8, seed=7)
        params.naive_w1 = np.zeros_like(params.naive_w1)
        params.naive_b1 = np.zeros_like(params.naive_b1)
        params.naive_w2 = np.zeros_like(params.naive_w2)
        params.naive_b2 = np.zeros_like(params.naive_b2)
        rng = np.random.default_rng(8)
        out, _ = naive_fuse(rng.normal(size=(3, 3, 8)),
                            rng.normal(size=(3, 3, 8)), params)
        assert not out.any()

    @pytest.mark.parametrize("shape", [(4, 4), (8, 8), (16, 16)])
    def test_zero_gate_identity_bitwise(self, shape):
        params = zero_gate_params(init_params(8, seed=9))
        rng = np.random.default_rng(10)
        f = rng.normal(size=shape + (8,))
        g = rng.normal(size=shape + (8,))
        out, gate, _ = adaptive_fuse(f, g, params)
        np.testing.assert_array_equal(out, f)
        assert not gate.any()

    def test_forced_full_gate(self):
        # With the gate saturated at 1, fusion adds the attended features.
        params = init_params(8, seed=11)
        params.gate_w1 = np.zeros_like(params.gate_w1)
        params.gate_b1 = np.zeros_like(params.gate_b1)
        params.gate_w2 = np.zeros_like(params.gate_w2)
        params.gate_b2 = np.full_like(params.gate_b2, 100.0)  # tanh -> 1.0
        rng = np.random.default_rng(12)
        f = rng.normal(size=(4, 4, 8))
        g = rng.normal(size=(4, 4, 8))
        out, gate, cache = adaptive_fuse(f, g, params)
        f_att = out - f
        assert gate.max() == 1.0
        # Rerun with zeroed output head to recover f exactly.
        np.testing.assert_allclose(out, f + 1.0 * f_att, rtol=0, atol=0)

    def test_gate_range(self):
        rng = np.random.default_rng(13)
        params = init_params(8, seed=14)
        params.gate_w2 = rng.normal(0, 10, size=params.gate_w2.shape)
        _, gate, _ = adaptive_fuse(rng.normal(size=(6, 6, 8)),
                                   rng.normal(size=(6, 6, 8)), params)
        assert gate.min() >= -1.0 and gate.max() <= 1.0

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(15)
        params = init_params(8, n_heads=2, seed=16)
        _, _, cache = adaptive_fuse(rng.normal(size=(5, 5, 8)),
                                    rng.normal(size=(5, 5, 8)), params)
        attn = cache[6]
        np.testing.assert_allclose(attn.sum(axis=2), 1.0, atol=1e-6)

    def test_token_count_mismatch(self):
        params = init_params(8, seed=17)
        with pytest.raises(ValidationError, match="token counts"):
            adaptive_fuse(np.zeros((4, 4, 8)).reshape(16, 8),
                          np.zeros((3, 3, 8)).reshape(9, 8), params)

    def test_per_channel_gate_variant(self):
        params = init_params(8, gate_per_channel=True, seed=18)
        rng = np.random.default_rng(19)
        out, gate, _ = adaptive_fuse(rng.normal(size=(4, 4, 8)),
                                     rng.normal(size=(4, 4, 8)), params)
        assert gate.shape == (4, 4, 8)
        assert gate.min() >= -1.0 and gate.max() <= 1.0


class TestGradients:
    @pytest.mark.parametrize("op", sorted(CHECKS))
    def test_finite_difference_agreement(self, op):
        worst = max(CHECKS[op](seed) for seed in range(5))
        assert worst <= 1e-5


class TestSerialization:
    def test_save_load_save_byte_identical(self, tmp_path):
        params = init_params(16, depth=3, n_heads=2, seed=20)
        d1 = tmp_path / "p1"
        d2 = tmp_path / "p2"
        save_params(params, d1)
        back = load_params(d1)
        save_params(back, d2)
        files1 = sorted(f.name for f in d1.iterdir())
        files2 = sorted(f.name for f in d2.iterdir())
        assert files1 == files2
        for name in files1:
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_roundtrip_values(self, tmp_path):
        params = init_params(8, seed=21)
        save_params(params, tmp_path / "p")
        back = load_params(tmp_path / "p")
        for (n1, a1), (n2, a2) in zip(params.tensor_items(), back.tensor_items()):
            assert n1 == n2
            np.testing.assert_array_equal(a1, a2)
        assert back.n_heads == params.n_heads

    def test_manifest_mismatch_rejected(self, tmp_path):
        params = init_params(8, seed=22)
        save_params(params, tmp_path / "p")
        # Corrupt one tensor's shape on disk.
        from splatfeat import write_tensor
        write_tensor(tmp_path / "p" / "proj_w.ftc1", np.zeros((2, 2)))
        with pytest.raises(ValidationError, match="proj_w"):
            load_params(tmp_path / "p")


class TestMultiscale:
    def test_single_scale_identity(self):
        cfg = MultiScaleConfig((ScaleSpec(8, 1),), (6, 6), 8)
        params = identity_multiscale(cfg)
        rng = np.random.default_rng(23)
        x = rng.normal(size=(6, 6, 8))
        out = multiscale_aggregate([x], cfg, params)
        np.testing.assert_array_equal(out, x)

    def test_two_identical_scales_average(self):
        cfg = MultiScaleConfig((ScaleSpec(8, 1), ScaleSpec(8, 1)), (5, 5), 8)
        params = identity_multiscale(cfg)
        rng = np.random.default_rng(24)
        x = rng.normal(size=(5, 5, 8))
        out = multiscale_aggregate([x, x.copy()], cfg, params)
        np.testing.assert_array_equal(out, x)

    def test_constant_preserved_through_resize(self):
        c = np.full((8, 8, 3), 0.7310585786300049)
        down = bilinear_resize(c, 4, 4)
        up = bilinear_resize(down, 8, 8)
        np.testing.assert_array_equal(up, c)

    def test_scatter_shapes(self):
        cfg = MultiScaleConfig((ScaleSpec(4, 4), ScaleSpec(8, 2), ScaleSpec(16, 1)),
                               (8, 8), 16)
        params = init_multiscale(cfg, seed=25)
        outs = multiscale_scatter(np.random.default_rng(26).normal(size=(8, 8, 16)),
                                  cfg, params, [(2, 2), (4, 4), (8, 8)])
        assert [o.shape for o in outs] == [(2, 2, 4), (4, 4, 8), (8, 8, 16)]

    def test_aggregate_mixed_scales(self):
        cfg = MultiScaleConfig((ScaleSpec(4, 4), ScaleSpec(8, 2)), (8, 8), 8)
        params = init_multiscale(cfg, seed=27)
        rng = np.random.default_rng(28)
        out = multiscale_aggregate([rng.normal(size=(2, 2, 4)),
                                    rng.normal(size=(4, 4, 8))], cfg, params)
        assert out.shape == (8, 8, 8)
        assert np.isfinite(out).all()

    def test_non_power_of_two_rejected(self):
        with pytest.raises(ValidationError, match="power of two"):
            MultiScaleConfig((ScaleSpec(8, 3),), (4, 4), 8)


class TestToyTrainer:
    @pytest.fixture(scope="class")
    @staticmethod
    def task():
        return build_toy_task(n_gaussians=3, ref_count=1, tar_count=1,
                              feature_dim=8, size=16, seed=0)

    def test_loss_drops_10x(self, task):
        res = toy_train(task, steps=200, lr=0.01, seed=0)
        assert res.losses[-1] < 0.1 * res.losses[0]

    def test_zero_lr_constant_curve(self, task):
        res = toy_train(task, steps=10, lr=0.0, seed=0)
        assert len(set(res.losses)) == 1

    def test_deterministic_given_seed(self, task):
        r1 = toy_train(task, steps=20, lr=0.01, seed=0)
        r2 = toy_train(task, steps=20, lr=0.01, seed=0)
        assert r1.losses == r2.losses

    def test_divergence_reports_step(self, task):
        with pytest.raises(DivergenceError) as exc:
            toy_train(task, steps=200, lr=50.0, seed=0)
        assert exc.value.step >= 0

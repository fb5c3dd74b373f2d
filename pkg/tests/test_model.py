import numpy as np
import pytest

from pointssm import tensor as T
from pointssm.tensor import Tensor
from pointssm.geometry import PointCloud, CapacityError
from pointssm.cofe import ConfigError
from pointssm.model import (ModelConfig, PointCloudClassifier, TokenSeq,
                            prepare_clouds, prepare_patch_coords, collate_prepared,
                            count_params, flop_estimate, layer_norm, drop_path)

TOY = ModelConfig(depth=2, dim=16, num_groups=8, group_size=4, lgp_neighbors=4,
                  cofe_groups=2, ssm_state=4, num_classes=4, seed=3)


def random_cloud(seed, n=64, scale=1.0):
    return PointCloud(np.random.default_rng(seed).normal(size=(n, 3)) * scale)


class TestConfig:
    def test_defaults_are_desk_scale(self):
        cfg = ModelConfig()
        assert (cfg.depth, cfg.dim, cfg.num_groups, cfg.group_size) == (4, 64, 32, 16)
        assert (cfg.ssm_state, cfg.cofe_groups, cfg.num_classes) == (8, 4, 8)

    def test_full_scale(self):
        cfg = ModelConfig.full_scale()
        assert (cfg.depth, cfg.dim, cfg.num_groups, cfg.group_size) == (12, 384, 128, 32)
        assert cfg.ssm_state == 16

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(dim=10, cofe_groups=4)
        with pytest.raises(ConfigError):
            ModelConfig(lgp_neighbors=40, num_groups=32)
        with pytest.raises(ConfigError):
            ModelConfig(depth=0)

    def test_token_seq_invariant(self):
        with pytest.raises(T.ShapeError):
            TokenSeq(features=Tensor(np.zeros((1, 5, 8))),
                     centers=np.zeros((1, 3, 3)))


class TestEncodePatches:
    def test_point_permutation_invariance(self):
        model = PointCloudClassifier(TOY)
        rng = np.random.default_rng(0)
        rel = rng.normal(size=(1, 8, 4, 3))
        base = model.encode_patches(rel).data
        perm = rel[:, :, rng.permutation(4), :]
        np.testing.assert_array_equal(model.encode_patches(perm).data, base)

    def test_degenerate_patch_no_nan(self):
        model = PointCloudClassifier(TOY)
        out = model.encode_patches(np.zeros((1, 8, 4, 3))).data
        assert np.isfinite(out).all()

    def test_duplicate_point_idempotent(self):
        # duplicating a point changes neither the patch radius (a max) nor
        # the max-pooled features
        model = PointCloudClassifier(TOY)
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(1, 8, 4, 3))
        centers = np.zeros((1, 8, 3))

        class FakePatches:
            neighbor_points = pts
            pass

        fake = FakePatches()
        fake.centers = centers
        rel = prepare_patch_coords(fake)
        dup = np.concatenate([pts, pts[:, :, :1, :]], axis=2)
        fake2 = FakePatches()
        fake2.neighbor_points = dup
        fake2.centers = centers
        rel_dup = prepare_patch_coords(fake2)
        base = model.encode_patches(rel).data
        extended = model.encode_patches(rel_dup).data
        np.testing.assert_array_equal(base, extended)


class TestTokenSequence:
    def test_sequence_length(self):
        model = PointCloudClassifier(TOY)
        prepared = prepare_clouds([random_cloud(0)], TOY)
        tokens = model.encode_patches(prepared.rel_points)
        seq = model.build_token_sequence(tokens, prepared.centers)
        assert seq.features.shape == (1, TOY.num_groups + 1, TOY.dim)

    def test_zero_positional_mlp_passthrough(self):
        model = PointCloudClassifier(TOY)
        for pos in model.pos:
            pos.w2.data = np.zeros_like(pos.w2.data)
            pos.b2.data = np.zeros_like(pos.b2.data)
            if pos.cls is not None:
                pos.cls.data = np.zeros_like(pos.cls.data)
        prepared = prepare_clouds([random_cloud(1)], TOY)
        tokens = model.encode_patches(prepared.rel_points)
        seq = model.build_token_sequence(tokens, prepared.centers)
        np.testing.assert_array_equal(seq.features.data[:, 1:], tokens.data)
        np.testing.assert_array_equal(seq.features.data[0, 0], model.cls_token.data)

    def test_translation_moves_positional_rows_only(self):
        model = PointCloudClassifier(TOY)
        cloud = random_cloud(2, scale=4.0)
        moved = PointCloud(cloud.points + np.array([0.3, -0.7, 1.1]))
        p1 = prepare_clouds([cloud], TOY)
        p2 = prepare_clouds([moved], TOY)
        t1 = model.encode_patches(p1.rel_points).data
        t2 = model.encode_patches(p2.rel_points).data
        assert np.abs(t1 - t2).max() < 1e-9    # tokens identical
        s1 = model.build_token_sequence(Tensor(t1), p1.centers).features.data
        s2 = model.build_token_sequence(Tensor(t2), p2.centers).features.data
        assert np.abs(s1 - s2).max() > 1e-4    # positional rows differ


class TestEncoderBlock:
    def _zero_block_params(self, model, layer):
        layer.lgp.mlp_w2.data = np.zeros_like(layer.lgp.mlp_w2.data)
        layer.lgp.mlp_b2.data = np.zeros_like(layer.lgp.mlp_b2.data)
        layer.bissm.out_w.data = np.zeros_like(layer.bissm.out_w.data)
        layer.bissm.out_b.data = np.zeros_like(layer.bissm.out_b.data)

    def test_zero_submodules_pure_residual(self):
        model = PointCloudClassifier(TOY)
        for layer in model.layers:
            self._zero_block_params(model, layer)
        prepared = prepare_clouds([random_cloud(3)], TOY)
        tokens = model.encode_patches(prepared.rel_points)
        seq = model.build_token_sequence(tokens, prepared.centers)
        out = model.encoder_block(seq, 0, prepared.lgp_geom)
        np.testing.assert_array_equal(out.features.data, seq.features.data)

    def test_full_drop_path_pure_residual(self):
        cfg = ModelConfig(depth=2, dim=16, num_groups=8, group_size=4,
                          lgp_neighbors=4, cofe_groups=2, ssm_state=4,
                          num_classes=4, seed=3, drop_path_rate=1.0)
        model = PointCloudClassifier(cfg)
        prepared = prepare_clouds([random_cloud(4)], cfg)
        tokens = model.encode_patches(prepared.rel_points)
        seq = model.build_token_sequence(tokens, prepared.centers)
        rng = np.random.default_rng(0)
        out = model.encoder_block(seq, 0, prepared.lgp_geom, training=True, rng=rng)
        np.testing.assert_array_equal(out.features.data, seq.features.data)

    def test_composition_matches_module_calls(self):
        from pointssm.lgp import lgp_forward
        from pointssm.bissm import bissm_forward
        model = PointCloudClassifier(TOY)
        prepared = prepare_clouds([random_cloud(5)], TOY)
        tokens = model.encode_patches(prepared.rel_points)
        seq = model.build_token_sequence(tokens, prepared.centers)
        out = model.encoder_block(seq, 0, prepared.lgp_geom).features.data

        layer = model.layers[0]
        with T.no_grad():
            z = seq.features
            pos = model._positional(1, seq.centers)
            n1 = layer_norm(z + pos, layer.norm1.scale, layer.norm1.shift)
            z_hat = lgp_forward(n1, prepared.lgp_geom, layer.lgp) + z
            n2 = layer_norm(z_hat, layer.norm2.scale, layer.norm2.shift)
            z_next = T.transpose(bissm_forward(T.transpose(n2, (0, 2, 1)),
                                               layer.bissm), (0, 2, 1)) + z_hat
        assert np.abs(out - z_next.data).max() < 1e-10


class TestForward:
    def test_logits_shape(self):
        model = PointCloudClassifier(TOY)
        assert model.forward(random_cloud(6)).shape == (TOY.num_classes,)

    def test_undersized_cloud_rejected(self):
        model = PointCloudClassifier(TOY)
        with pytest.raises(CapacityError):
            model.forward(PointCloud(np.zeros((4, 3))))

    def test_point_permutation_invariance(self):
        model = PointCloudClassifier(TOY)
        model.head_w3.data = np.random.default_rng(9).normal(0, 0.1,
                                                             size=model.head_w3.shape)
        cloud = random_cloud(7)
        base = model.forward(cloud)
        for seed in range(3):
            perm = np.random.default_rng(seed).permutation(len(cloud))
            other = model.forward(PointCloud(cloud.points[perm]))
            assert np.abs(base - other).max() < 1e-9

    def test_scale_translation_probe_zero_positional(self):
        # with the positional path silenced, global similarity transforms
        # must not move the logits
        model = PointCloudClassifier(TOY)
        model.head_w3.data = np.random.default_rng(10).normal(0, 0.1,
                                                              size=model.head_w3.shape)
        for pos in model.pos:
            pos.w2.data = np.zeros_like(pos.w2.data)
            pos.b2.data = np.zeros_like(pos.b2.data)
        cloud = PointCloud(np.random.default_rng(11).uniform(0, 20, size=(64, 3)))
        base = model.forward(cloud)
        moved = PointCloud(cloud.points * 2.3 + np.array([5.0, -3.0, 1.0]))
        assert np.abs(model.forward(moved) - base).max() < 1e-6

    def test_residual_identity_with_zeroed_blocks(self):
        model = PointCloudClassifier(TOY)
        model.head_w3.data = np.random.default_rng(12).normal(0, 0.1,
                                                              size=model.head_w3.shape)
        for layer in model.layers:
            layer.lgp.mlp_w2.data = np.zeros_like(layer.lgp.mlp_w2.data)
            layer.lgp.mlp_b2.data = np.zeros_like(layer.lgp.mlp_b2.data)
            layer.bissm.out_w.data = np.zeros_like(layer.bissm.out_w.data)
            layer.bissm.out_b.data = np.zeros_like(layer.bissm.out_b.data)
        prepared = prepare_clouds([random_cloud(13)], TOY)
        with T.no_grad():
            logits = model.forward_batch(prepared).data[0]
            tokens = model.encode_patches(prepared.rel_points)
            seq = model.build_token_sequence(tokens, prepared.centers)
            final = layer_norm(seq.features, model.final_norm.scale,
                               model.final_norm.shift)
            expected = model.head(T.select(final, 1, 0)).data[0]
        np.testing.assert_allclose(logits, expected, atol=1e-12)

    def test_batched_matches_single(self):
        model = PointCloudClassifier(TOY)
        model.head_w3.data = np.random.default_rng(14).normal(0, 0.1,
                                                              size=model.head_w3.shape)
        clouds = [random_cloud(20 + i) for i in range(3)]
        prepared = collate_prepared([prepare_clouds([c], TOY) for c in clouds])
        with T.no_grad():
            batched = model.forward_batch(prepared).data
        for i, cloud in enumerate(clouds):
            np.testing.assert_allclose(model.forward(cloud), batched[i], atol=1e-12)


class TestDropPath:
    def test_eval_mode_identity(self):
        x = Tensor(np.ones((4, 2, 2)))
        assert drop_path(x, 0.5, training=False, rng=None) is x

    def test_rate_one_zeroes(self):
        x = Tensor(np.ones((4, 2, 2)))
        out = drop_path(x, 1.0, training=True, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(out.data, np.zeros((4, 2, 2)))

    def test_scaling_preserves_expectation(self):
        rng = np.random.default_rng(1)
        x = Tensor(np.ones((4000, 1, 1)))
        out = drop_path(x, 0.25, training=True, rng=rng)
        assert abs(out.data.mean() - 1.0) < 0.05


class TestAudits:
    @staticmethod
    def closed_form_total(cfg: ModelConfig) -> int:
        c = cfg.dim
        h1, h2, hidden = 64, 128, PointCloudClassifier.PE_HIDDEN
        cat = 2 * h2
        pe = (3 * h1 + h1) + (h1 * h2 + h2) + (cat * hidden + hidden) + (hidden * c + c)
        cls = c
        pos = (cfg.depth + 1) * (3 * c + c + c * c + c) + c   # +c: input class row
        norms = (2 * cfg.depth + 1) * 2 * c
        lgp = cfg.depth * (2 * c + 2 * c + (2 * c * c + c) + (c * c + c))
        cg = c // cfg.cofe_groups
        cofe = cfg.depth * (cg * cg + cg + 3 * cg * cg + cg + 2 * cg)
        n = cfg.ssm_state
        ssm_one = c * n + 2 * (n * c) + c * c + c + c
        gate = (c * c + c) if cfg.use_ssm_gate else 0
        directions = 1 if cfg.share_reverse_weights else 2
        bissm = cfg.depth * ((c * c + c) + cofe // cfg.depth
                             + directions * (ssm_one + gate) + (c * c + c))
        head_in = 2 * c if cfg.head_pool_concat else c
        head = (head_in * 256 + 256) + (256 * 256 + 256) \
            + (256 * cfg.num_classes + cfg.num_classes)
        return pe + cls + pos + norms + lgp + bissm + head

    def test_toy_closed_form_count(self):
        cfg = ModelConfig(depth=2, dim=32, num_groups=8, group_size=4,
                          lgp_neighbors=4, cofe_groups=4, ssm_state=4,
                          num_classes=4)
        report = count_params(cfg)
        assert report["total"] == self.closed_form_total(cfg)

    def test_full_scale_cofe_delta(self):
        report = count_params(ModelConfig.full_scale())
        assert 25_000 <= report["cofe_added"] <= 35_000

    def test_geometric_path_delta_zero(self):
        cfg = ModelConfig.full_scale()
        with_coupling = count_params(cfg)
        without = count_params(ModelConfig(**{**cfg.__dict__,
                                              "lgp_gaussian_coupling": False}))
        assert with_coupling["total"] - without["total"] == 0
        assert with_coupling["geometric_path_added"] == 0

    def test_audit_traversals_agree(self):
        report = count_params(TOY)
        assert report["total"] == sum(report["table"].values())

    def test_flop_cofe_delta_full_scale(self):
        flops = flop_estimate(ModelConfig.full_scale())
        assert 0.045e9 <= flops["cofe_added"] <= 0.135e9

    def test_gaussian_coupling_flag_changes_weights_only(self):
        cloud = random_cloud(15)
        on = prepare_clouds([cloud], TOY)
        cfg_off = ModelConfig(**{**TOY.__dict__, "lgp_gaussian_coupling": False})
        off = prepare_clouds([cloud], cfg_off)
        np.testing.assert_array_equal(on.lgp_geom.neighbor_idx,
                                      off.lgp_geom.neighbor_idx)
        assert (off.lgp_geom.weights == 1.0).all()
        assert (on.lgp_geom.weights != off.lgp_geom.weights).any()

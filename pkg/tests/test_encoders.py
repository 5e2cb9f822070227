"""Encoder contracts: determinism, normalization, invariances, semantics."""
import numpy as np
import pytest

from imuloc import numerics as nx
from imuloc.encoders import (EncoderConfig, build_semantic_table, encode_imu,
                             encode_imu_batch, encode_patch, encode_patch_batch,
                             init_encoders, params_checksum, semantic_embed)
from imuloc.errors import CompatibilityError, ConfigError


def small_config(**kw):
    defaults = dict(feature_dim=16, imu_rate_hz=20, imu_channels=(6, 8),
                    imu_kernel=3, point_channels=(8, 12), patch_points=64)
    defaults.update(kw)
    return EncoderConfig(**defaults)


def test_init_deterministic():
    a_imu, a_pt = init_encoders(small_config(), seed=4)
    b_imu, b_pt = init_encoders(small_config(), seed=4)
    assert a_imu.checksum() == b_imu.checksum()
    assert a_pt.checksum() == b_pt.checksum()
    c_imu, _ = init_encoders(small_config(), seed=5)
    assert a_imu.checksum() != c_imu.checksum()


def test_default_feature_dim_is_64():
    imu, pt = init_encoders(EncoderConfig(), seed=1)
    f = encode_imu(imu, np.zeros((50, 6)))
    assert f.shape == (64,)
    g = encode_patch(pt, np.zeros((1024, 3)))
    assert g.shape == (64,)


def test_zero_inputs_give_finite_unit_features():
    imu, pt = init_encoders(small_config(), seed=2)
    f = encode_imu(imu, np.zeros((20, 6))).data
    g = encode_patch(pt, np.zeros((64, 3))).data
    for v in (f, g):
        assert np.isfinite(v).all()
        assert abs(np.linalg.norm(v) - 1.0) <= 1e-6


def test_feature_norms_all_modalities():
    imu, pt = init_encoders(small_config(), seed=3)
    rng = np.random.default_rng(0)
    fm = encode_imu_batch(imu, rng.normal(size=(10, 20, 6))).data
    fp = encode_patch_batch(pt, rng.normal(size=(10, 64, 3))).data
    table = build_semantic_table(8, 16, 0.1, seed=1)
    fi = np.stack([semantic_embed(table, c, "image", t=c, seed=2) for c in range(8)])
    fl = np.stack([semantic_embed(table, c, "text", t=0, seed=2) for c in range(8)])
    for batch in (fm, fp, fi, fl):
        assert np.abs(np.linalg.norm(batch, axis=1) - 1.0).max() <= 1e-6


def test_identical_windows_identical_features():
    imu, _ = init_encoders(small_config(), seed=6)
    w = np.random.default_rng(1).normal(size=(20, 6))
    a = encode_imu(imu, w).data
    b = encode_imu(imu, w.copy()).data
    assert np.array_equal(a, b)


def test_rate_mismatch_rejected():
    imu, _ = init_encoders(small_config(), seed=6)
    with pytest.raises(CompatibilityError):
        encode_imu(imu, np.zeros((21, 6)))


def test_wrong_point_count_rejected():
    _, pt = init_encoders(small_config(), seed=6)
    with pytest.raises(CompatibilityError):
        encode_patch(pt, np.zeros((63, 3)))


def test_patch_permutation_invariance_bit_exact():
    # all 101 encodings happen inside one batched call so identical point
    # sets must map to identical bits; row 0 is the unshuffled patch
    _, pt = init_encoders(small_config(), seed=7)
    rng = np.random.default_rng(3)
    for patch_i in range(20):
        patch = rng.normal(size=(64, 3))
        perms = np.stack([rng.permutation(64) for _ in range(100)])
        rows = np.concatenate([patch[None], patch[perms]])  # (101, 64, 3)
        feats = encode_patch_batch(pt, rows).data
        assert np.array_equal(feats, np.tile(feats[0], (101, 1))), f"patch {patch_i}"


def test_patch_permutation_invariance_single_calls():
    _, pt = init_encoders(small_config(), seed=8)
    rng = np.random.default_rng(4)
    patch = rng.normal(size=(64, 3))
    ref = encode_patch(pt, patch).data
    for _ in range(100):
        shuffled = patch[rng.permutation(64)]
        assert np.array_equal(encode_patch(pt, shuffled).data, ref)


def test_imu_encoder_gradients_match_finite_differences():
    def factory(seed):
        cfg = small_config(imu_rate_hz=10)
        imu, _ = init_encoders(cfg, seed=seed)
        rng = np.random.default_rng(seed)
        window = rng.normal(size=(1, 10, 6))
        probe = rng.normal(size=(1, cfg.feature_dim))
        def build(params):
            feat = encode_imu_batch(imu, window)
            return nx.meanpool(nx.meanpool(nx.mul(feat, nx.Tensor(probe)), 1), 0)
        return imu.params, build

    report = nx.grad_check(factory, seed=3)
    assert report.passed, f"max rel err {report.max_rel_error:.2e} at {report.worst}"


def test_point_encoder_gradients_match_finite_differences():
    def factory(seed):
        cfg = small_config(patch_points=16)
        _, pt = init_encoders(cfg, seed=seed)
        rng = np.random.default_rng(seed)
        patch = rng.normal(size=(1, 16, 3))
        probe = rng.normal(size=(1, cfg.feature_dim))
        def build(params):
            feat = encode_patch_batch(pt, patch)
            return nx.meanpool(nx.meanpool(nx.mul(feat, nx.Tensor(probe)), 1), 0)
        return pt.params, build

    report = nx.grad_check(factory, seed=5)
    assert report.passed, f"max rel err {report.max_rel_error:.2e} at {report.worst}"


def test_residual_flag_changes_parameter_set():
    with_skip, _ = init_encoders(small_config(imu_residual=True), seed=1)
    without, _ = init_encoders(small_config(imu_residual=False), seed=1)
    assert "skip_w" in with_skip.params
    assert "skip_w" not in without.params


def test_sink_patch_vs_floor_patch_features_differ():
    # measured at the default encoder width and init; training widens the gap
    from imuloc.world import SceneConfig, generate_scene, patch_at
    scene, cloud = generate_scene(SceneConfig(), seed=42)
    _, pt = init_encoders(EncoderConfig(), seed=0)
    sink = next(a for a in scene.anchors if a.type.name == "sink")
    span = np.linspace(0.5, scene.extent_m - 0.5, 8)
    far = max(((x, y) for x in span for y in span),
              key=lambda c: min(np.hypot(c[0] - a.x, c[1] - a.y) for a in scene.anchors))
    f_sink = encode_patch(pt, patch_at(cloud, sink.xy, 1024, seed=1).points).data
    f_floor = encode_patch(pt, patch_at(cloud, far, 1024, seed=1).points).data
    assert float(f_sink @ f_floor) < 0.99


# ---------------------------------------------------------------------------
# semantic table


def test_table_orthogonality_and_determinism():
    table = build_semantic_table(8, 64, 0.1, seed=3)
    gram = np.abs(table.vectors @ table.vectors.T - np.eye(8))
    assert gram.max() <= 0.2
    assert table.checksum() == build_semantic_table(8, 64, 0.1, seed=3).checksum()


def test_table_rejects_too_many_classes():
    with pytest.raises(ConfigError):
        build_semantic_table(20, 16, 0.1, seed=1)


def test_text_embed_is_frozen_class_vector():
    table = build_semantic_table(8, 32, 0.1, seed=4)
    for t in (0, 7, 123):
        assert np.array_equal(semantic_embed(table, 3, "text", t=t, seed=9),
                              table.vectors[3])


def test_image_embed_sigma_zero_equals_text():
    table = build_semantic_table(8, 32, 0.0, seed=4)
    assert np.array_equal(semantic_embed(table, 2, "image", t=5, seed=9),
                          semantic_embed(table, 2, "text", t=5, seed=9))


def test_image_embed_stays_close_to_class_vector():
    table = build_semantic_table(8, 32, 0.1, seed=4)
    cosines = [float(semantic_embed(table, 1, "image", t=t, seed=9) @ table.vectors[1])
               for t in range(1000)]
    assert np.mean(cosines) >= 0.95


def test_unknown_class_rejected():
    table = build_semantic_table(8, 32, 0.1, seed=4)
    with pytest.raises(CompatibilityError):
        semantic_embed(table, 8, "text", t=0, seed=1)


def test_params_checksum_tracks_any_change():
    imu, _ = init_encoders(small_config(), seed=1)
    before = params_checksum(imu.params)
    imu.params["head_b"].data[0] += 1e-9
    assert params_checksum(imu.params) != before

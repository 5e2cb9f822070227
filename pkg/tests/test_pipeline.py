"""Dataset loading, feature precompute, and end-to-end wiring on tiny runs."""
import numpy as np
import pytest

from imuloc import pipeline
from imuloc.dataio import load_stage1_checkpoint, load_stage2_checkpoint
from imuloc.encoders import params_checksum
from imuloc.errors import CompatibilityError, ConfigError


def test_manifest_and_dataset_accessors(tiny_workspace):
    ds = tiny_workspace.dataset
    assert len(ds.trajectories("train")) == 6
    assert len(ds.trajectories("test_seen")) == 1
    assert len(ds.trajectories("test_unseen")) == 1
    with pytest.raises(ConfigError):
        ds.trajectories("validation")
    rec = ds.trajectories("train")[0]
    w = ds.windows(rec)
    assert w.shape[1:] == (50, 6)
    segs, acts = ds.labels(rec)
    assert segs.shape == acts.shape == (w.shape[0],)


def test_regenerated_motion_matches_stored_labels(tiny_workspace):
    ds = tiny_workspace.dataset
    from imuloc.motion import ground_truth_labels
    for rec in ds.trajectories("test_seen"):
        script, traj = ds.regen_motion(rec)
        segs, acts = ground_truth_labels(traj, script, ds.grid(rec["scene"]))
        stored_segs, stored_acts = ds.labels(rec)
        assert np.array_equal(segs, stored_segs)
        assert np.array_equal(acts, stored_acts)


def test_aligned_samples_are_consistent(tiny_workspace):
    ds = tiny_workspace.dataset
    aligned = pipeline.build_aligned(ds)
    n_train = len(ds.trajectories("train"))
    expected = n_train * int(ds.config.motion.trajectory_s)
    assert aligned.n_samples == expected
    idx = np.arange(0, aligned.n_samples, 5)
    patches = aligned.patch_batch(idx)
    assert patches.shape == (len(idx), ds.config.world.patch_points, 3)
    again = aligned.patch_batch(idx)
    assert np.array_equal(patches, again)


def test_clip_dataset_gather_shapes(tiny_workspace):
    ds = tiny_workspace.dataset
    imu_enc, point_enc, _ = pipeline.load_stage1(ds, tiny_workspace.stage1_path)
    clips = pipeline.build_clip_dataset(ds, imu_enc, point_enc, "train")
    t_len = ds.config.stage2.sequence_len
    batch = clips.gather(np.array([0, 1, 2]), t_len, 0.07)
    s = ds.config.world.grid_cells ** 2
    d = ds.config.encoders.feature_dim
    assert batch.heatmaps.shape == (3, t_len, s)
    assert np.abs(batch.heatmaps.sum(axis=2) - 1.0).max() <= 1e-6
    assert batch.imu_feats.shape == (3, t_len, d)
    assert batch.patch_feats.shape == (3, s, d)
    assert batch.segments.shape == batch.actions.shape == (3, t_len)


def test_corrupted_checkpoint_blob_is_rejected(tiny_workspace, tmp_path):
    # the embedded probe features catch silent parameter corruption
    from imuloc.errors import DataError
    raw = bytearray(tiny_workspace.stage1_path.read_bytes())
    raw[-1] ^= 0x7F  # clobber the exponent of the last parameter
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    with pytest.raises(DataError):
        load_stage1_checkpoint(bad)


def test_stage2_checkpoint_binds_to_stage1(tiny_workspace):
    imu_enc, point_enc, _ = load_stage1_checkpoint(tiny_workspace.stage1_path)
    _, header = load_stage2_checkpoint(tiny_workspace.stage2_path)
    assert header["imu_checksum"] == params_checksum(imu_enc.params)
    assert header["point_checksum"] == params_checksum(point_enc.params)


def test_eval_refuses_foreign_checkpoints(tiny_workspace, tmp_path):
    root = tmp_path / "other"
    other = pipeline.Dataset  # build a sibling workspace with another seed
    from conftest import build_workspace
    ws2 = build_workspace(root, seed=12)
    with pytest.raises(CompatibilityError):
        pipeline.run_eval(ws2.dataset, tiny_workspace.stage1_path,
                          tiny_workspace.stage2_path, tiny_workspace.velocity_path,
                          tmp_path / "r.json")


def test_stage2_ablation_flags_flow_through(tiny_workspace, tmp_path):
    ds = tiny_workspace.dataset
    out = tmp_path / "s2_variant.ckpt"
    ckpt = pipeline.run_train_stage2(ds, tiny_workspace.stage1_path, out,
                                     steps=3, temporal=False, spatial=False)
    assert ckpt.config.temporal is False and ckpt.config.spatial is False
    reasoner, header = load_stage2_checkpoint(out)
    assert header["stage2_config"]["temporal"] is False


def test_report_contains_all_method_and_chance_entries(tiny_workspace):
    report = tiny_workspace.report
    for split in ("seen", "unseen"):
        assert set(report["splits"][split]) == {"stage2", "stage1_retrieval",
                                                "dead_reckoning"}
        assert set(report["chance"][split]) == {"0.2", "0.4", "0.6"}
        s2 = report["splits"][split]["stage2"]
        assert set(s2["action_topk"]) == {"1", "5"}
        assert len(s2["drift_curve"]) == int(tiny_workspace.dataset.config.motion.trajectory_s)

"""End-to-end orchestration: dataset generation, training runs, evaluation.

The dataset directory is the source of truth between commands: streams and
clouds are read back from disk (float32), while trajectories and scripts are
regenerated from their recorded seeds when exact ground truth is needed.
"""
from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import dataio
from .baselines import (VelocityNetParams, dead_reckon, drift_curve,
                        rotate_to_world, train_velocity_net)
from .config import RunConfig
from .datasets import AlignedSamples, ClipDataset
from .encoders import (EncoderConfig, ImuEncoderParams, PointEncoderParams,
                       build_semantic_table, encode_imu_batch, params_checksum)
from .errors import CompatibilityError, ConfigError, DataError
from .evaluation import (EvalReport, chance_success_rate, relative_score,
                         success_rate, topk_accuracy, write_report)
from .inference import infer, scene_patch_features, verify_frozen
from .motion import (ActionScript, NoiseModel, Trajectory, ground_truth_labels,
                     make_action_set, mean_positions_per_second, plan_script,
                     simulate_trajectory, synthesize_imu, window_imu)
from .stage1 import Stage1Checkpoint, train_stage1
from .stage2 import Stage2Checkpoint, train_stage2
from .world import Scene, SceneConfig, ScenePointCloud, SegmentGrid, generate_scene

SPLITS = ("train", "test_seen", "test_unseen")


def encoder_config_from(cfg: RunConfig) -> EncoderConfig:
    e = cfg.encoders
    return EncoderConfig(
        feature_dim=e.feature_dim,
        imu_rate_hz=cfg.motion.imu_rate_hz,
        imu_channels=tuple(e.imu_channels),
        imu_kernel=e.imu_kernel,
        imu_residual=e.imu_residual,
        point_channels=tuple(e.point_channels),
        patch_points=cfg.world.patch_points,
        image_noise_sigma=e.image_noise_sigma,
    )


def scene_config_from(cfg: RunConfig) -> SceneConfig:
    w = cfg.world
    return SceneConfig(
        extent_m=w.extent_m,
        anchor_counts=dict(w.anchor_counts),
        points_per_anchor=w.points_per_anchor,
        floor_density_per_m2=w.floor_density_per_m2,
    )


def _scene_seed(root: int, index: int) -> int:
    return root * 1_000 + index


def _traj_seed(root: int, uid: int) -> int:
    return root * 1_000_000 + uid


# ---------------------------------------------------------------------------
# generation


def generate_dataset(cfg: RunConfig, out_dir: Path, force: bool = False) -> dict:
    """Write scenes, clouds, scripts, IMU streams, labels, and the manifest."""
    cfg.validate()
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise DataError(f"output directory {out_dir} is not empty; pass --force")
        shutil.rmtree(out_dir)
    for sub in ("scenes", "clouds", "trajs"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    actions = make_action_set(cfg.motion.n_action_classes)
    scene_cfg = scene_config_from(cfg)
    noise = NoiseModel(cfg.motion.accel_sigma, cfg.motion.gyro_sigma,
                       cfg.motion.bias_rw_sigma)
    n_train = cfg.dataset.train_scenes
    n_unseen = cfg.dataset.unseen_test_scenes

    scenes = []
    scene_objs: list[tuple[Scene, ScenePointCloud]] = []
    for i in range(n_train + n_unseen):
        role = "train" if i < n_train else "unseen"
        seed = _scene_seed(cfg.seed, i)
        scene, cloud = generate_scene(scene_cfg, seed)
        sid = f"scene_{i:03d}"
        dataio.write_scene_json(scene, out_dir / "scenes" / f"{sid}.json")
        dataio.write_cloud_bin(cloud, out_dir / "clouds" / f"{sid}.bin")
        scenes.append({"id": sid, "role": role, "seed": seed,
                       "scene_file": f"scenes/{sid}.json",
                       "cloud_file": f"clouds/{sid}.bin"})
        scene_objs.append((scene, cloud))

    grid_by_scene = {rec["id"]: SegmentGrid(obj[1].extent_m, cfg.world.grid_cells)
                     for rec, obj in zip(scenes, scene_objs)}

    plan = []
    for i in range(n_train):
        plan += [(f"scene_{i:03d}", "train")] * cfg.dataset.trajs_per_scene
    for i in range(cfg.dataset.seen_test_scenes):
        plan += [(f"scene_{i:03d}", "test_seen")] * cfg.dataset.test_trajs_per_scene
    for i in range(n_train, n_train + n_unseen):
        plan += [(f"scene_{i:03d}", "test_unseen")] * cfg.dataset.test_trajs_per_scene

    trajs = []
    for uid, (sid, split) in enumerate(plan):
        seed = _traj_seed(cfg.seed, uid)
        scene, cloud = scene_objs[int(sid.split("_")[1])]
        script = plan_script(scene, actions, cfg.motion.trajectory_s, seed,
                             rate_hz=cfg.motion.imu_rate_hz,
                             walk_speed=cfg.motion.walk_speed,
                             walk_accel=cfg.motion.walk_accel)
        traj = simulate_trajectory(scene, script, jitter_amp_m=cfg.motion.jitter_amp_m)
        stream = synthesize_imu(traj, script, noise, seed)
        segments, acts = ground_truth_labels(traj, script, grid_by_scene[sid])
        tid = f"traj_{uid:04d}"
        dataio.write_script_jsonl(script, out_dir / "trajs" / f"{tid}.script.jsonl")
        dataio.write_stream_bin(stream, out_dir / "trajs" / f"{tid}.imu.bin")
        dataio.write_labels_csv(segments, acts, out_dir / "trajs" / f"{tid}.labels.csv")
        trajs.append({"id": tid, "scene": sid, "split": split, "seed": seed, "uid": uid,
                      "script_file": f"trajs/{tid}.script.jsonl",
                      "imu_file": f"trajs/{tid}.imu.bin",
                      "labels_file": f"trajs/{tid}.labels.csv"})

    manifest = {
        "format_version": dataio.FORMAT_VERSION,
        "package_version": dataio.PACKAGE_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "scenes": scenes,
        "trajectories": trajs,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# dataset loading


@dataclass
class Dataset:
    root: Path
    manifest: dict
    config: RunConfig

    _scene_cache: dict = None  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "_scene_cache", {})

    @classmethod
    def load(cls, root: Path | str) -> "Dataset":
        root = Path(root)
        path = root / "manifest.json"
        try:
            manifest = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        for key in ("config", "config_hash", "scenes", "trajectories"):
            if key not in manifest:
                raise DataError(f"manifest {path} is missing key {key!r}")
        cfg = RunConfig.from_dict(manifest["config"])
        if cfg.config_hash() != manifest["config_hash"]:
            raise DataError(f"manifest {path}: config hash does not match its config")
        return cls(root, manifest, cfg)

    @property
    def hash(self) -> str:
        return self.manifest["config_hash"]

    @property
    def actions(self):
        return make_action_set(self.config.motion.n_action_classes)

    def scene(self, sid: str) -> tuple[Scene, ScenePointCloud]:
        if sid not in self._scene_cache:
            rec = next((s for s in self.manifest["scenes"] if s["id"] == sid), None)
            if rec is None:
                raise DataError(f"scene {sid} not in manifest")
            scene = dataio.read_scene_json(self.root / rec["scene_file"])
            cloud = dataio.read_cloud_bin(self.root / rec["cloud_file"])
            self._scene_cache[sid] = (scene, cloud)
        return self._scene_cache[sid]

    def grid(self, sid: str) -> SegmentGrid:
        _, cloud = self.scene(sid)
        return SegmentGrid(cloud.extent_m, self.config.world.grid_cells)

    def scene_seed(self, sid: str) -> int:
        rec = next(s for s in self.manifest["scenes"] if s["id"] == sid)
        return rec["seed"]

    def trajectories(self, split: str) -> list[dict]:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        return [t for t in self.manifest["trajectories"] if t["split"] == split]

    def windows(self, rec: dict) -> np.ndarray:
        stream = dataio.read_stream_bin(self.root / rec["imu_file"])
        return window_imu(stream)

    def labels(self, rec: dict) -> tuple[np.ndarray, np.ndarray]:
        return dataio.read_labels_csv(self.root / rec["labels_file"])

    def regen_motion(self, rec: dict) -> tuple[ActionScript, Trajectory]:
        """Re-derive script and trajectory from the recorded seed."""
        scene, _ = self.scene(rec["scene"])
        m = self.config.motion
        script = plan_script(scene, self.actions, m.trajectory_s, rec["seed"],
                             rate_hz=m.imu_rate_hz, walk_speed=m.walk_speed,
                             walk_accel=m.walk_accel)
        traj = simulate_trajectory(scene, script, jitter_amp_m=m.jitter_amp_m)
        return script, traj


# ---------------------------------------------------------------------------
# training entry points


def build_aligned(ds: Dataset) -> AlignedSamples:
    recs = ds.trajectories("train")
    if not recs:
        raise DataError("dataset has no training trajectories")
    scene_ids = sorted({r["scene"] for r in recs})
    scene_pos = {sid: i for i, sid in enumerate(scene_ids)}
    clouds = [ds.scene(sid)[1] for sid in scene_ids]

    windows, acts, positions, scene_of, patch_seeds, image_keys = [], [], [], [], [], []
    for rec in recs:
        w = ds.windows(rec)
        _, actions = ds.labels(rec)
        _, traj = ds.regen_motion(rec)
        means = mean_positions_per_second(traj)
        n_sec = min(w.shape[0], actions.shape[0], means.shape[0])
        windows.append(w[:n_sec])
        acts.append(actions[:n_sec])
        positions.append(means[:n_sec])
        scene_of.append(np.full(n_sec, scene_pos[rec["scene"]], dtype=np.int64))
        base = rec["seed"] * 100_000
        patch_seeds.append(base + np.arange(n_sec, dtype=np.int64))
        image_keys.append(rec["uid"] * 100_000 + np.arange(n_sec, dtype=np.int64))
    return AlignedSamples(
        windows=np.concatenate(windows),
        actions=np.concatenate(acts),
        positions=np.concatenate(positions),
        scene_of=np.concatenate(scene_of),
        clouds=clouds,
        patch_seeds=np.concatenate(patch_seeds),
        image_keys=np.concatenate(image_keys),
        patch_points=ds.config.world.patch_points,
        patch_side_m=ds.config.world.patch_side_m,
        root_seed=ds.config.seed,
    )


def run_train_stage1(ds: Dataset, out_path: Path,
                     steps: int | None = None) -> Stage1Checkpoint:
    cfg = ds.config
    s1_cfg = cfg.stage1 if steps is None else replace(cfg.stage1, steps=steps)
    aligned = build_aligned(ds)
    table = build_semantic_table(cfg.motion.n_action_classes,
                                 cfg.encoders.feature_dim,
                                 cfg.encoders.image_noise_sigma, cfg.seed)
    ckpt = train_stage1(aligned, table, s1_cfg, encoder_config_from(cfg), cfg.seed)
    dataio.save_stage1_checkpoint(ckpt, ds.hash, out_path)
    dataio.write_trace_csv(ckpt.loss_trace, ("step", "loss"),
                           Path(str(out_path) + ".trace.csv"))
    return ckpt


def load_stage1(ds: Dataset, path: Path) -> tuple[ImuEncoderParams, PointEncoderParams, dict]:
    imu_enc, point_enc, header = dataio.load_stage1_checkpoint(path)
    if header["dataset_hash"] != ds.hash:
        raise CompatibilityError(
            f"stage-1 checkpoint {path} was trained on a different dataset "
            f"(hash {header['dataset_hash'][:12]} vs {ds.hash[:12]})")
    return imu_enc, point_enc, header


def build_clip_dataset(ds: Dataset, imu_enc: ImuEncoderParams,
                       point_enc: PointEncoderParams, split: str) -> ClipDataset:
    recs = ds.trajectories(split)
    if not recs:
        raise DataError(f"dataset has no {split} trajectories")
    cfg = ds.config
    scene_ids = sorted({r["scene"] for r in recs})
    scene_pos = {sid: i for i, sid in enumerate(scene_ids)}
    patch_feats = [
        scene_patch_features(ds.scene(sid)[1], ds.grid(sid), point_enc,
                             cfg.world.patch_points, cfg.world.patch_side_m,
                             ds.scene_seed(sid))
        for sid in scene_ids]

    imu_feats, sims, segments, actions, scene_of = [], [], [], [], []
    for rec in recs:
        w = ds.windows(rec)
        segs, acts = ds.labels(rec)
        n_sec = min(w.shape[0], segs.shape[0])
        feats = encode_imu_batch(imu_enc, w[:n_sec]).data
        pf = patch_feats[scene_pos[rec["scene"]]]
        imu_feats.append(feats)
        sims.append(feats @ pf.T)
        segments.append(segs[:n_sec])
        actions.append(acts[:n_sec])
        scene_of.append(scene_pos[rec["scene"]])
    return ClipDataset.build(imu_feats, sims, segments, actions, scene_of,
                             patch_feats, cfg.stage2.sequence_len)


def run_train_stage2(ds: Dataset, stage1_path: Path, out_path: Path,
                     steps: int | None = None,
                     action_loss: bool | None = None,
                     temporal: bool | None = None,
                     spatial: bool | None = None) -> Stage2Checkpoint:
    cfg = ds.config
    s2_cfg = cfg.stage2
    if steps is not None:
        s2_cfg = replace(s2_cfg, steps=steps)
    if action_loss is not None:
        s2_cfg = replace(s2_cfg, action_loss=action_loss)
    if temporal is not None:
        s2_cfg = replace(s2_cfg, temporal=temporal)
    if spatial is not None:
        s2_cfg = replace(s2_cfg, spatial=spatial)
    imu_enc, point_enc, _ = load_stage1(ds, stage1_path)
    if imu_enc.config.feature_dim != cfg.encoders.feature_dim:
        raise CompatibilityError(
            f"checkpoint D={imu_enc.config.feature_dim} does not match config "
            f"D={cfg.encoders.feature_dim}")
    clips = build_clip_dataset(ds, imu_enc, point_enc, "train")
    ckpt = train_stage2(clips, params_checksum(imu_enc.params),
                        params_checksum(point_enc.params), s2_cfg,
                        cfg.encoders.feature_dim, cfg.world.grid_cells,
                        cfg.motion.n_action_classes, cfg.seed)
    dataio.save_stage2_checkpoint(ckpt, ds.hash, out_path)
    dataio.write_trace_csv(ckpt.loss_trace, ("step", "traj", "action", "total"),
                           Path(str(out_path) + ".trace.csv"))
    return ckpt


def velocity_training_pairs(ds: Dataset, split: str = "train"
                            ) -> tuple[np.ndarray, np.ndarray]:
    """(world-frame windows, displacements integrated over each window).

    Window k spans samples [k*rate, (k+1)*rate), so its target is the motion
    between the starts of seconds k and k+1: fully determined by the window.
    """
    wins, disps = [], []
    for rec in ds.trajectories(split):
        w = ds.windows(rec)
        _, traj = ds.regen_motion(rec)
        rate = ds.config.motion.imu_rate_hz
        n_sec = min(w.shape[0], traj.n_samples // rate)
        starts = traj.positions[::rate][:n_sec]
        flat = w[:n_sec].reshape(n_sec * rate, 6)
        rotated = rotate_to_world(flat, traj.headings[:n_sec * rate])
        w_world = rotated.reshape(n_sec, rate, 6)
        wins.append(w_world[:n_sec - 1])
        disps.append(starts[1:] - starts[:-1])
    return np.concatenate(wins), np.concatenate(disps)


def run_train_velocity(ds: Dataset, out_path: Path,
                       steps: int | None = None) -> VelocityNetParams:
    cfg = ds.config
    v_cfg = cfg.velocity if steps is None else replace(cfg.velocity, steps=steps)
    wins, disps = velocity_training_pairs(ds)
    net, trace = train_velocity_net(wins, disps, v_cfg, cfg.motion.imu_rate_hz,
                                    cfg.seed)
    final = trace[-1][1] if trace else float("nan")
    dataio.save_velocity_checkpoint(net, ds.hash, final, out_path)
    dataio.write_trace_csv(trace, ("step", "loss"), Path(str(out_path) + ".trace.csv"))
    return net


# ---------------------------------------------------------------------------
# evaluation


def run_eval(ds: Dataset, stage1_path: Path, stage2_path: Path,
             velocity_path: Path, report_path: Path,
             drift_csv_path: Path | None = None,
             heatmap_dir: Path | None = None,
             heatmap_format: str = "csv") -> dict:
    """Evaluate stage-2 inference, stage-1 retrieval, and dead reckoning."""
    cfg = ds.config
    eval_cfg = cfg.eval
    eval_cfg.validate()
    imu_enc, point_enc, _ = load_stage1(ds, stage1_path)
    reasoner, s2_header = dataio.load_stage2_checkpoint(stage2_path)
    if s2_header["dataset_hash"] != ds.hash:
        raise CompatibilityError("stage-2 checkpoint belongs to a different dataset")
    verify_frozen(s2_header, imu_enc, point_enc)
    net, v_header = dataio.load_velocity_checkpoint(velocity_path)
    if v_header["dataset_hash"] != ds.hash:
        raise CompatibilityError("velocity checkpoint belongs to a different dataset")

    report = EvalReport(config_hash=ds.hash, seed=cfg.seed)
    drift_rows: list[tuple] = []
    for split, split_name in (("test_seen", "seen"), ("test_unseen", "unseen")):
        recs = ds.trajectories(split)
        if not recs:
            continue
        gts, preds = [], {"stage2": [], "stage1_retrieval": [], "dead_reckoning": []}
        rs_vals = {"stage2": [], "stage1_retrieval": []}
        act_hits: dict[str, list[np.ndarray]] = {"logits": [], "aux": [], "labels": []}
        for rec in recs:
            scene, cloud = ds.scene(rec["scene"])
            grid = ds.grid(rec["scene"])
            windows = ds.windows(rec)
            segs_true, acts_true = ds.labels(rec)
            _, traj = ds.regen_motion(rec)
            gt = mean_positions_per_second(traj)
            n_sec = min(windows.shape[0], gt.shape[0], segs_true.shape[0])
            windows, gt = windows[:n_sec], gt[:n_sec]
            segs_true, acts_true = segs_true[:n_sec], acts_true[:n_sec]

            result = infer(windows, cloud, imu_enc, point_enc, reasoner,
                           cfg.world.patch_points, cfg.world.patch_side_m,
                           ds.scene_seed(rec["scene"]))
            retrieval_segs = np.argmax(result.heatmap_stage1, axis=1)

            rate = cfg.motion.imu_rate_hz
            flat = windows.reshape(n_sec * rate, 6)
            world_w = rotate_to_world(flat, traj.headings[:n_sec * rate]) \
                .reshape(n_sec, rate, 6)
            dr = dead_reckon(net, world_w, gt[0])

            gts.append(gt)
            preds["stage2"].append(result.positions)
            preds["stage1_retrieval"].append(grid.centers[retrieval_segs])
            preds["dead_reckoning"].append(dr[:n_sec])
            for t in range(n_sec):
                rs_vals["stage2"].append(
                    relative_score(result.heatmap_stage2[t], int(segs_true[t])))
                rs_vals["stage1_retrieval"].append(
                    relative_score(result.heatmap_stage1[t], int(segs_true[t])))
            act_hits["logits"].append(result.action_logits)
            act_hits["aux"].append(result.action_logits_imu_only)
            act_hits["labels"].append(acts_true)

            if heatmap_dir is not None:
                _export_heatmaps(result, rec["id"], cfg.world.grid_cells,
                                 Path(heatmap_dir), heatmap_format)

        split_doc: dict = {}
        gt_all = np.concatenate(gts)
        for method, plist in preds.items():
            pred_all = np.concatenate(plist)
            entry = {"success": {f"{thr:g}": success_rate(pred_all, gt_all, thr)
                                 for thr in eval_cfg.thresholds_m}}
            if method in rs_vals:
                entry["rs_mean"] = float(np.mean(rs_vals[method]))
            curve = drift_curve(plist, gts)
            entry["drift_curve"] = [float(v) for v in curve]
            for t, v in enumerate(curve):
                drift_rows.append((split_name, method, t, float(v)))
            split_doc[method] = entry
        logits_all = np.concatenate(act_hits["logits"])
        aux_all = np.concatenate(act_hits["aux"])
        labels_all = np.concatenate(act_hits["labels"])
        split_doc["stage2"]["action_topk"] = {
            str(k): topk_accuracy(logits_all, labels_all, k) for k in eval_cfg.topk}
        split_doc["stage2"]["action_topk_imu_only"] = {
            str(k): topk_accuracy(aux_all, labels_all, k) for k in eval_cfg.topk}
        report.splits[split_name] = split_doc
        grid0 = ds.grid(recs[0]["scene"])
        report.chance[split_name] = {
            f"{thr:g}": chance_success_rate(grid0, gt_all, thr,
                                            eval_cfg.chance_draws, cfg.seed)
            for thr in eval_cfg.thresholds_m}

    write_report(report, report_path)
    if drift_csv_path is not None:
        dataio.write_trace_csv(drift_rows, ("split", "method", "t", "error_m"),
                               Path(drift_csv_path))
    return report.to_dict()


def _export_heatmaps(result, traj_id: str, grid_cells: int, out_dir: Path,
                     fmt: str) -> None:
    sub = out_dir / traj_id
    sub.mkdir(parents=True, exist_ok=True)
    for t in range(result.heatmap_stage2.shape[0]):
        for stage, heat in (("stage1", result.heatmap_stage1),
                            ("stage2", result.heatmap_stage2)):
            if fmt == "pgm":
                dataio.write_heatmap_pgm(heat[t], grid_cells,
                                         sub / f"t{t:04d}.{stage}.pgm")
            else:
                dataio.write_heatmap_csv(heat[t], grid_cells,
                                         sub / f"t{t:04d}.{stage}.csv")


def export_predictions(result, out_path: Path) -> None:
    dataio.write_predictions_csv(result.positions, result.segments, result.actions,
                                 result.confidences, out_path)

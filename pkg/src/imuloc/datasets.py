"""In-memory training views: aligned per-second samples and T-second clips."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import SemanticTable, semantic_embed
from .errors import DataError
from .stage2 import heatmap_from_similarity
from .world import ScenePointCloud, patch_at


@dataclass
class AlignedSamples:
    """One row per (trajectory, second): the synchronized four-modality sample.

    Patches are extracted lazily per batch; the per-sample patch seed makes
    repeated extraction bit-identical.
    """
    windows: np.ndarray        # (n, rate, 6)
    actions: np.ndarray        # (n,)
    positions: np.ndarray      # (n, 2) mean position within the second
    scene_of: np.ndarray       # (n,) index into clouds
    clouds: list[ScenePointCloud]
    patch_seeds: np.ndarray    # (n,)
    image_keys: np.ndarray     # (n,) unique per (trajectory, second)
    patch_points: int
    patch_side_m: float
    root_seed: int

    @property
    def n_samples(self) -> int:
        return self.windows.shape[0]

    def patch_batch(self, idx: np.ndarray) -> np.ndarray:
        out = np.empty((len(idx), self.patch_points, 3))
        for row, i in enumerate(idx):
            patch = patch_at(self.clouds[self.scene_of[i]], self.positions[i],
                             self.patch_points, self.patch_side_m,
                             seed=int(self.patch_seeds[i]))
            out[row] = patch.points
        return out

    def image_features(self, idx: np.ndarray, table: SemanticTable) -> np.ndarray:
        return np.stack([
            semantic_embed(table, int(self.actions[i]), "image",
                           t=int(self.image_keys[i]), seed=self.root_seed)
            for i in idx])

    def text_features(self, idx: np.ndarray, table: SemanticTable) -> np.ndarray:
        return table.vectors[self.actions[idx]].copy()


@dataclass
class ClipBatch:
    heatmaps: np.ndarray     # (B, T, S)
    imu_feats: np.ndarray    # (B, T, D)
    patch_feats: np.ndarray  # (B, S, D)
    segments: np.ndarray     # (B, T)
    actions: np.ndarray      # (B, T)


@dataclass
class ClipDataset:
    """T-second clips over precomputed frozen features.

    ``sims`` holds raw similarity rows per trajectory; heatmaps are
    materialized per batch at the requested temperature.
    """
    imu_feats: list[np.ndarray]    # per traj (n_sec, D)
    sims: list[np.ndarray]         # per traj (n_sec, S)
    segments: list[np.ndarray]     # per traj (n_sec,)
    actions: list[np.ndarray]      # per traj (n_sec,)
    scene_of: list[int]
    patch_feats: list[np.ndarray]  # per scene (S, D)
    clip_index: np.ndarray         # (n_clips, 2): traj id, start second

    @classmethod
    def build(cls, imu_feats, sims, segments, actions, scene_of, patch_feats,
              sequence_len: int) -> "ClipDataset":
        clips = []
        for t_i, feats in enumerate(imu_feats):
            n_sec = feats.shape[0]
            for start in range(0, n_sec - sequence_len + 1):
                clips.append((t_i, start))
        if not clips:
            raise DataError(
                f"no trajectory is long enough for {sequence_len}-second clips")
        return cls(imu_feats, sims, segments, actions, scene_of, patch_feats,
                   np.array(clips, dtype=np.int64))

    @property
    def n_clips(self) -> int:
        return self.clip_index.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.imu_feats[0].shape[1]

    def gather(self, idx: np.ndarray, sequence_len: int,
               temperature: float) -> ClipBatch:
        rows = self.clip_index[idx]
        heat, imu, patch, seg, act = [], [], [], [], []
        for traj_id, start in rows:
            stop = start + sequence_len
            heat.append(heatmap_from_similarity(self.sims[traj_id][start:stop],
                                                temperature))
            imu.append(self.imu_feats[traj_id][start:stop])
            patch.append(self.patch_feats[self.scene_of[traj_id]])
            seg.append(self.segments[traj_id][start:stop])
            act.append(self.actions[traj_id][start:stop])
        return ClipBatch(np.stack(heat), np.stack(imu), np.stack(patch),
                         np.stack(seg), np.stack(act))

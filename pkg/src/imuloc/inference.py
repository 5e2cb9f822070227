"""Whole-sequence localization: frozen encoders + trained reasoner.

Sequences are processed in non-overlapping blocks of T seconds; a trailing
partial block is padded by repeating the last window and the padded
predictions are discarded.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import (ImuEncoderParams, PointEncoderParams, encode_imu_batch,
                       encode_patch_batch, params_checksum)
from .errors import CompatibilityError, DataError
from .numerics import Tensor
from .stage2 import (ReasonerParams, action_recognize, action_recognize_imu_only,
                     heatmap_from_similarity, stage2_forward)
from .world import ScenePointCloud, SegmentGrid, grid_patches


@dataclass
class InferenceResult:
    positions: np.ndarray        # (K, 2) centers of the argmax segments
    segments: np.ndarray         # (K,)
    actions: np.ndarray          # (K,)
    confidences: np.ndarray      # (K,) probability mass at the argmax segment
    heatmap_stage1: np.ndarray   # (K, S) similarity softmax
    heatmap_stage2: np.ndarray   # (K, S) trajectory probabilities
    action_logits: np.ndarray    # (K, A)
    action_logits_imu_only: np.ndarray  # (K, A)


def verify_frozen(reasoner_header: dict, imu_enc: ImuEncoderParams,
                  point_enc: PointEncoderParams) -> None:
    """Reject encoder/reasoner pairs that were not trained together."""
    if reasoner_header["imu_checksum"] != params_checksum(imu_enc.params) or \
            reasoner_header["point_checksum"] != params_checksum(point_enc.params):
        raise CompatibilityError(
            "stage-2 checkpoint was trained against different stage-1 encoders")


def scene_patch_features(cloud: ScenePointCloud, grid: SegmentGrid,
                         point_enc: PointEncoderParams, patch_points: int,
                         patch_side_m: float, seed: int) -> np.ndarray:
    patches = grid_patches(cloud, grid, patch_points, patch_side_m, seed)
    stacked = np.stack([p.points for p in patches])
    return encode_patch_batch(point_enc, stacked).data


def infer(windows: np.ndarray, cloud: ScenePointCloud, imu_enc: ImuEncoderParams,
          point_enc: PointEncoderParams, reasoner: ReasonerParams,
          patch_points: int, patch_side_m: float, patch_seed: int) -> InferenceResult:
    """Predict per-second locations and actions for a windowed IMU sequence."""
    t_len = reasoner.config.sequence_len
    k = windows.shape[0]
    if k < t_len:
        raise DataError(f"sequence of {k} s shorter than the block length {t_len} s")
    if imu_enc.config.feature_dim != reasoner.feature_dim:
        raise CompatibilityError(
            f"encoder D={imu_enc.config.feature_dim} vs reasoner D={reasoner.feature_dim}")
    grid = SegmentGrid(cloud.extent_m, reasoner.grid_cells)

    imu_feats = encode_imu_batch(imu_enc, windows).data
    patch_feats = scene_patch_features(cloud, grid, point_enc, patch_points,
                                       patch_side_m, patch_seed)
    sims = imu_feats @ patch_feats.T
    tau = reasoner.config.heatmap_temperature
    heat1 = heatmap_from_similarity(sims, tau)

    n_blocks = (k + t_len - 1) // t_len
    idx = np.minimum(np.arange(n_blocks * t_len), k - 1)  # pad by repeating the end
    block_heat = heatmap_from_similarity(sims[idx], tau).reshape(n_blocks, t_len, -1)
    block_imu = imu_feats[idx].reshape(n_blocks, t_len, -1)
    block_patch = np.broadcast_to(patch_feats, (n_blocks,) + patch_feats.shape).copy()

    logits, probs = stage2_forward(reasoner, block_heat, block_imu, block_patch)
    act_logits = action_recognize(reasoner, probs, Tensor(block_patch),
                                  Tensor(block_imu))
    aux_logits = action_recognize_imu_only(reasoner, Tensor(block_imu))

    heat2 = probs.data.reshape(n_blocks * t_len, -1)[:k]
    act = act_logits.data.reshape(n_blocks * t_len, -1)[:k]
    aux = aux_logits.data.reshape(n_blocks * t_len, -1)[:k]
    segments = np.argmax(heat2, axis=1)
    return InferenceResult(
        positions=grid.centers[segments],
        segments=segments,
        actions=np.argmax(act, axis=1),
        confidences=heat2[np.arange(k), segments],
        heatmap_stage1=heat1,
        heatmap_stage2=heat2,
        action_logits=act,
        action_logits_imu_only=aux,
    )

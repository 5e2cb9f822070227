"""Sequential localization: heatmaps, 3-D conv reasoning, and the action head.

Stage-1 encoders are frozen here; their features and the correspondence
heatmaps enter the graph as constants, and only the reasoning parameters
train. The volume layout is channels-first: (B, C, T, G, G).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .errors import CompatibilityError, ConfigError, ShapeMismatchError
from .numerics import (AdamW, AdamWConfig, Tensor, add, backward, broadcast,
                       concat, conv3d, cross_entropy, matmul, mul_scalar,
                       precision, relu, reshape, softmax, transpose)


@dataclass
class Stage2Config:
    sequence_len: int = 10
    heatmap_temperature: float = 0.07
    channels: int = 16
    batch_size: int = 4
    steps: int = 400
    lr: float = 1e-3
    weight_decay: float = 0.01
    action_loss: bool = True
    temporal: bool = True
    spatial: bool = True
    residual_imu: bool = True
    residual_point: bool = True
    train_imu_only_head: bool = True
    train_dtype: str = "float32"

    def validate(self) -> None:
        if self.sequence_len < 1:
            raise ConfigError("sequence_len must be >= 1")
        if self.heatmap_temperature <= 0:
            raise ConfigError("heatmap temperature must be positive")
        if self.train_dtype not in ("float32", "float64"):
            raise ConfigError(f"train_dtype must be float32 or float64, got {self.train_dtype!r}")


@dataclass
class ReasonerParams:
    config: Stage2Config
    feature_dim: int
    grid_cells: int
    n_actions: int
    params: dict[str, Tensor] = field(default_factory=dict)

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())


def init_reasoner(cfg: Stage2Config, feature_dim: int, grid_cells: int,
                  n_actions: int, seed: int) -> ReasonerParams:
    """Fan-in uniform init; all parameters exist regardless of ablation flags."""
    cfg.validate()
    c = cfg.channels
    d = feature_dim
    gen = seeding.rng(seed, seeding.STAGE2_INIT)

    def u(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(gen.uniform(-bound, bound, size=shape), requires_grad=True)

    k3 = 27
    params = {
        "imu_proj_w": u((d, c), d), "imu_proj_b": u((c,), d),
        "t_conv1_w": u((c, c + 1, 3, 3, 3), (c + 1) * k3), "t_conv1_b": u((c,), (c + 1) * k3),
        "t_conv2_w": u((c, c, 3, 3, 3), c * k3), "t_conv2_b": u((c,), c * k3),
        "pt_proj_w": u((d, c), d), "pt_proj_b": u((c,), d),
        "s_conv1_w": u((c, 2 * c, 3, 3, 3), 2 * c * k3), "s_conv1_b": u((c,), 2 * c * k3),
        "s_conv2_w": u((c, c, 3, 3, 3), c * k3), "s_conv2_b": u((c,), c * k3),
        "s_conv3_w": u((c, c, 3, 3, 3), c * k3), "s_conv3_b": u((c,), c * k3),
        "head_w": u((c, 1), c), "head_b": u((1,), c),
        "act_proj_w": u((d, d), d), "act_proj_b": u((d,), d),
        "act_mlp1_w": u((d, d), d), "act_mlp1_b": u((d,), d),
        "act_mlp2_w": u((d, n_actions), d), "act_mlp2_b": u((n_actions,), d),
        "aux_mlp1_w": u((d, d), d), "aux_mlp1_b": u((d,), d),
        "aux_mlp2_w": u((d, n_actions), d), "aux_mlp2_b": u((n_actions,), d),
    }
    return ReasonerParams(cfg, d, grid_cells, n_actions, params)


def heatmap_from_similarity(sim: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise softmax of similarity / temperature, always in double."""
    if temperature <= 0:
        raise ConfigError("heatmap temperature must be positive")
    z = np.asarray(sim, dtype=np.float64) / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def correspondence_heatmaps(imu_feats: np.ndarray, patch_feats: np.ndarray,
                            temperature: float) -> np.ndarray:
    """(T, S) heatmap rows: softmax over segments of feature similarity."""
    return heatmap_from_similarity(imu_feats @ patch_feats.T, temperature)


def _project_rows(rows: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """(.., D) @ (D, C) + b applied over the flattened leading axes."""
    lead = rows.shape[:-1]
    d = rows.shape[-1]
    c = w.shape[1]
    flat = reshape(rows, (int(np.prod(lead)), d))
    out = add(matmul(flat, w), broadcast(reshape(b, (1, c)), (flat.shape[0], c)))
    return reshape(out, lead + (c,))


def temporal_reason(reasoner: ReasonerParams, heatmaps: Tensor,
                    imu_feats: Tensor) -> Tensor:
    """Refined volume (B, C, T, G, G) from heatmaps (B, 1, T, G, G) and IMU features.

    With the temporal flag off the heatmap is simply repeated across channels;
    with the residual flag off the broadcast IMU path is not added back.
    """
    cfg = reasoner.config
    c = cfg.channels
    b, _, t_len, g, _ = heatmaps.shape
    if t_len != cfg.sequence_len:
        raise CompatibilityError(
            f"temporal_reason: expected T={cfg.sequence_len}, got {t_len}")
    if not cfg.temporal:
        return broadcast(heatmaps, (b, c, t_len, g, g))
    p = reasoner.params
    proj = _project_rows(imu_feats, p["imu_proj_w"], p["imu_proj_b"])  # (B, T, C)
    proj_map = broadcast(reshape(transpose(proj, (0, 2, 1)), (b, c, t_len, 1, 1)),
                         (b, c, t_len, g, g))
    h = concat([proj_map, heatmaps], axis=1)
    h = relu(conv3d(h, p["t_conv1_w"], p["t_conv1_b"], pad=(1, 1, 1)))
    h = relu(conv3d(h, p["t_conv2_w"], p["t_conv2_b"], pad=(1, 1, 1)))
    if cfg.residual_imu:
        h = add(h, proj_map)
    return h


def spatial_reason(reasoner: ReasonerParams, refined: Tensor,
                   patch_feats: Tensor) -> Tensor:
    """Trajectory logits (B, T, S) from the refined volume and point features.

    Three dilated conv layers (spatial dilations 1, 2, 4) give a receptive
    field of 15 cells per spatial axis before the per-cell affine head.
    """
    cfg = reasoner.config
    c = cfg.channels
    p = reasoner.params
    b, _, t_len, g, _ = refined.shape
    if cfg.spatial:
        if patch_feats.shape[1] != g * g:
            raise ShapeMismatchError(
                f"spatial_reason: patch features {patch_feats.shape} do not tile a "
                f"{g}x{g} grid")
        pproj = _project_rows(patch_feats, p["pt_proj_w"], p["pt_proj_b"])  # (B, S, C)
        pmap = broadcast(reshape(transpose(pproj, (0, 2, 1)), (b, c, 1, g, g)),
                         (b, c, t_len, g, g))
        h = concat([refined, pmap], axis=1)
        h = relu(conv3d(h, p["s_conv1_w"], p["s_conv1_b"], pad=(1, 1, 1)))
        h = relu(conv3d(h, p["s_conv2_w"], p["s_conv2_b"],
                        dilation=(1, 2, 2), pad=(1, 2, 2)))
        h = relu(conv3d(h, p["s_conv3_w"], p["s_conv3_b"],
                        dilation=(1, 4, 4), pad=(1, 4, 4)))
        if cfg.residual_point:
            h = add(h, pmap)
    else:
        h = refined
    cells = reshape(transpose(h, (0, 2, 3, 4, 1)), (b * t_len * g * g, c))
    logits = add(matmul(cells, p["head_w"]),
                 broadcast(reshape(p["head_b"], (1, 1)), (cells.shape[0], 1)))
    return reshape(logits, (b, t_len, g * g))


def action_recognize(reasoner: ReasonerParams, traj_probs: Tensor,
                     patch_feats: Tensor, imu_feats: Tensor) -> Tensor:
    """Action logits (B, T, A): location-attended point features fused with IMU.

    attended_t = sum_s prob[t, s] * F_cloud[s]; the projection of that vector
    is added to the IMU feature and pushed through the two-layer MLP.
    """
    p = reasoner.params
    b, t_len, s = traj_probs.shape
    d = reasoner.feature_dim
    per_clip = []
    for i in range(b):
        probs_i = reshape(_slice_batch(traj_probs, i), (t_len, s))
        patch_i = reshape(_slice_batch(patch_feats, i), (s, d))
        per_clip.append(reshape(matmul(probs_i, patch_i), (1, t_len, d)))
    attended = concat(per_clip, axis=0) if b > 1 else per_clip[0]
    fused = add(_project_rows(attended, p["act_proj_w"], p["act_proj_b"]), imu_feats)
    h = relu(_project_rows(fused, p["act_mlp1_w"], p["act_mlp1_b"]))
    return _project_rows(h, p["act_mlp2_w"], p["act_mlp2_b"])


def action_recognize_imu_only(reasoner: ReasonerParams, imu_feats: Tensor) -> Tensor:
    """Ablation head that never sees the scene: MLP on IMU features alone."""
    p = reasoner.params
    h = relu(_project_rows(imu_feats, p["aux_mlp1_w"], p["aux_mlp1_b"]))
    return _project_rows(h, p["aux_mlp2_w"], p["aux_mlp2_b"])


def _slice_batch(t: Tensor, i: int) -> Tensor:
    """Select batch item i via reshape-free indexing on the graph."""
    b = t.shape[0]
    rest = int(np.prod(t.shape[1:]))
    flat = reshape(t, (b, rest))
    picker = np.zeros((1, b))
    picker[0, i] = 1.0
    return reshape(matmul(Tensor(picker), flat), t.shape[1:])


def traj_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Cross-entropy summed over the sequence; labels are segment indices."""
    t_len, s = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (t_len,):
        raise ShapeMismatchError(f"traj_loss: labels {labels.shape} vs logits {logits.shape}")
    return cross_entropy(logits, labels, reduction="sum")


def action_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Cross-entropy summed over the sequence; labels are action classes."""
    t_len, a = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (t_len,):
        raise ShapeMismatchError(f"action_loss: labels {labels.shape} vs logits {logits.shape}")
    return cross_entropy(logits, labels, reduction="sum")


@dataclass
class Stage2Checkpoint:
    reasoner: ReasonerParams
    config: Stage2Config
    feature_dim: int
    grid_cells: int
    n_actions: int
    imu_checksum: str
    point_checksum: str
    final_loss: float
    loss_trace: list[tuple[int, float, float, float]] = field(default_factory=list)
    # trace rows: (step, traj term, action term, combined)


def stage2_forward(reasoner: ReasonerParams, heatmaps: np.ndarray,
                   imu_feats: np.ndarray, patch_feats: np.ndarray
                   ) -> tuple[Tensor, Tensor]:
    """Batched forward pass: returns (trajectory logits, trajectory probs)."""
    b, t_len, s = heatmaps.shape
    g = reasoner.grid_cells
    h_const = Tensor(heatmaps.reshape(b, 1, t_len, g, g))
    imu_const = Tensor(imu_feats)
    patch_const = Tensor(patch_feats)
    refined = temporal_reason(reasoner, h_const, imu_const)
    logits = spatial_reason(reasoner, refined, patch_const)
    return logits, softmax(logits, axis=2)


def train_stage2(clips, stage1_imu_checksum: str, stage1_point_checksum: str,
                 cfg: Stage2Config, feature_dim: int, grid_cells: int,
                 n_actions: int, seed: int) -> Stage2Checkpoint:
    """Train the reasoning modules on frozen features.

    ``clips`` is a ClipDataset (see datasets module) serving constant
    per-clip heatmaps, features, and labels. Determinism comes from the
    seeded sampler and the single-threaded graph.
    """
    cfg.validate()
    if clips.feature_dim != feature_dim:
        raise CompatibilityError(
            f"stage-2 config D={feature_dim} but clip features have D={clips.feature_dim}")
    trace: list[tuple[int, float, float, float]] = []
    final = float("nan")
    with precision(cfg.train_dtype):
        reasoner = init_reasoner(cfg, feature_dim, grid_cells, n_actions, seed)
        opt = AdamW(reasoner.params, AdamWConfig(lr=cfg.lr, weight_decay=cfg.weight_decay))
        gen = seeding.rng(seed, seeding.STAGE2_TRAIN)

        for step in range(cfg.steps):
            idx = gen.choice(clips.n_clips, size=cfg.batch_size, replace=False)
            batch = clips.gather(idx, cfg.sequence_len, cfg.heatmap_temperature)
            b = cfg.batch_size
            logits, probs = stage2_forward(reasoner, batch.heatmaps, batch.imu_feats,
                                           batch.patch_feats)
            t_len = cfg.sequence_len
            s = grid_cells * grid_cells
            flat_logits = reshape(logits, (b * t_len, s))
            l_traj = mul_scalar(
                cross_entropy(flat_logits, batch.segments.reshape(-1), reduction="sum"),
                1.0 / b)
            terms = [l_traj]
            l_action_val = 0.0
            if cfg.action_loss:
                act_logits = action_recognize(reasoner, probs, Tensor(batch.patch_feats),
                                              Tensor(batch.imu_feats))
                l_action = mul_scalar(
                    cross_entropy(reshape(act_logits, (b * t_len, n_actions)),
                                  batch.actions.reshape(-1), reduction="sum"),
                    1.0 / b)
                terms.append(l_action)
                l_action_val = l_action.item()
            if cfg.train_imu_only_head:
                aux_logits = action_recognize_imu_only(reasoner, Tensor(batch.imu_feats))
                l_aux = mul_scalar(
                    cross_entropy(reshape(aux_logits, (b * t_len, n_actions)),
                                  batch.actions.reshape(-1), reduction="sum"),
                    1.0 / b)
                terms.append(l_aux)
            total = terms[0]
            for extra in terms[1:]:
                total = add(total, extra)
            opt.zero_grad()
            backward(total)
            opt.step()
            final = l_traj.item() + l_action_val
            trace.append((step, l_traj.item(), l_action_val, final))
    return Stage2Checkpoint(reasoner, cfg, feature_dim, grid_cells, n_actions,
                            stage1_imu_checksum, stage1_point_checksum, final, trace)

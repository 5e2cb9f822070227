"""Short-term alignment: contrastive training of the IMU and patch encoders.

Image and text features come from the frozen semantic table and enter the
loss as constants, so gradients flow only into the two trainable encoders.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .errors import ConfigError, DataError, ShapeMismatchError
from .encoders import (EncoderConfig, ImuEncoderParams, PointEncoderParams,
                       SemanticTable, encode_imu_batch, encode_patch_batch,
                       init_encoders)
from .numerics import (AdamW, AdamWConfig, Tensor, add, backward, cross_entropy,
                       matmul, mul_scalar, precision, transpose)


@dataclass
class Stage1Config:
    alpha: float = 0.1    # image <-> IMU
    beta: float = 1.0     # image <-> cloud
    theta: float = 1.0    # text <-> IMU
    delta: float = 1.0    # text <-> cloud
    gamma: float = 1.0    # IMU <-> cloud
    temperature: float = 0.07
    batch_size: int = 64
    steps: int = 2000
    lr: float = 1e-3
    warmup_steps: int = 600      # linear ramp to lr; 0 disables
    cosine_decay: bool = True    # cosine anneal after warmup
    final_lr_frac: float = 0.1
    weight_decay: float = 0.01
    # float32 keeps the desk benchmark inside its CPU budget; float64 stays
    # the reference for every correctness test
    train_dtype: str = "float32"

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ConfigError("contrastive temperature must be positive")
        for name in ("alpha", "beta", "theta", "delta", "gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be non-negative")
        if self.train_dtype not in ("float32", "float64"):
            raise ConfigError(f"train_dtype must be float32 or float64, got {self.train_dtype!r}")


def infonce(a: Tensor, b: Tensor, temperature: float) -> Tensor:
    """Symmetric InfoNCE over in-batch negatives with diagonal targets."""
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    if a.shape != b.shape or a.data.ndim != 2:
        raise ShapeMismatchError(
            f"infonce: feature batches must share shape (B, D), got {a.shape} vs {b.shape}")
    n = a.shape[0]
    targets = np.arange(n)
    sim = mul_scalar(matmul(a, transpose(b)), 1.0 / temperature)
    row_ce = cross_entropy(sim, targets, reduction="mean")
    col_ce = cross_entropy(transpose(sim), targets, reduction="mean")
    return mul_scalar(add(row_ce, col_ce), 0.5)


def stage1_loss(f_img: Tensor, f_txt: Tensor, f_imu: Tensor, f_cloud: Tensor,
                cfg: Stage1Config) -> Tensor:
    """Weighted sum of the five pairwise contrastive terms.

    Terms are accumulated in a fixed order (IM, IP, LM, LP, MP); zero-weight
    terms are skipped entirely, which is how the modality ablations are
    realized.
    """
    total: Tensor | None = None
    pairs = (
        (cfg.alpha, f_img, f_imu),
        (cfg.beta, f_img, f_cloud),
        (cfg.theta, f_txt, f_imu),
        (cfg.delta, f_txt, f_cloud),
        (cfg.gamma, f_imu, f_cloud),
    )
    for weight, lhs, rhs in pairs:
        if weight == 0.0:
            continue
        term = mul_scalar(infonce(lhs, rhs, cfg.temperature), weight)
        total = term if total is None else add(total, term)
    if total is None:
        raise ConfigError("all stage-1 loss weights are zero")
    return total


@dataclass
class Stage1Checkpoint:
    imu_enc: ImuEncoderParams
    point_enc: PointEncoderParams
    config: Stage1Config
    table_checksum: str
    final_loss: float
    loss_trace: list[tuple[int, float]] = field(default_factory=list)


def _scheduled_lr(cfg: Stage1Config, step: int) -> float:
    """Linear warmup, then optional cosine anneal down to final_lr_frac."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    if not cfg.cosine_decay or cfg.steps <= cfg.warmup_steps:
        return cfg.lr
    span = cfg.steps - cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / span
    frac = cfg.final_lr_frac
    return cfg.lr * (frac + (1.0 - frac) * 0.5 * (1.0 + np.cos(np.pi * progress)))


class BatchSampler:
    """Seeded pass-based shuffling; reshuffles when a pass is exhausted."""

    def __init__(self, n: int, batch_size: int, seed: int):
        if n < batch_size:
            raise DataError(f"dataset of {n} samples smaller than batch {batch_size}")
        self.n = n
        self.batch_size = batch_size
        self.gen = seeding.rng(seed, seeding.STAGE1_TRAIN)
        self._perm = self.gen.permutation(n)
        self._cursor = 0

    def next_batch(self) -> np.ndarray:
        if self._cursor + self.batch_size > self.n:
            self._perm = self.gen.permutation(self.n)
            self._cursor = 0
        out = self._perm[self._cursor:self._cursor + self.batch_size]
        self._cursor += self.batch_size
        return out


def train_stage1(dataset, table: SemanticTable, cfg: Stage1Config,
                 enc_cfg: EncoderConfig, seed: int) -> Stage1Checkpoint:
    """Contrastive training of both encoders with AdamW.

    ``dataset`` is an AlignedSamples container (see datasets module). Only
    encoder parameters receive gradients; the semantic table is read-only.
    """
    cfg.validate()
    with precision(cfg.train_dtype):
        imu_enc, point_enc = init_encoders(enc_cfg, seed)
        params = {f"imu.{k}": v for k, v in imu_enc.params.items()}
        params.update({f"point.{k}": v for k, v in point_enc.params.items()})
        opt = AdamW(params, AdamWConfig(lr=cfg.lr, weight_decay=cfg.weight_decay))
        sampler = BatchSampler(dataset.n_samples, cfg.batch_size, seed)

        trace: list[tuple[int, float]] = []
        loss_value = float("nan")
        for step in range(cfg.steps):
            opt.cfg.lr = _scheduled_lr(cfg, step)
            idx = sampler.next_batch()
            f_img = Tensor(dataset.image_features(idx, table))
            f_txt = Tensor(dataset.text_features(idx, table))
            f_imu = encode_imu_batch(imu_enc, dataset.windows[idx])
            f_cloud = encode_patch_batch(point_enc, dataset.patch_batch(idx))
            loss = stage1_loss(f_img, f_txt, f_imu, f_cloud, cfg)
            opt.zero_grad()
            backward(loss)
            opt.step()
            loss_value = loss.item()
            trace.append((step, loss_value))
    return Stage1Checkpoint(imu_enc, point_enc, cfg, table.checksum(),
                            loss_value, trace)


def retrieve_location(imu_feats: np.ndarray, patch_feats: np.ndarray) -> np.ndarray:
    """Per-second argmax of IMU-to-patch similarity; ties go to the lowest index."""
    if imu_feats.ndim != 2 or patch_feats.ndim != 2 or imu_feats.shape[1] != patch_feats.shape[1]:
        raise ShapeMismatchError(
            f"retrieve_location: incompatible shapes {imu_feats.shape} vs {patch_feats.shape}")
    return np.argmax(imu_feats @ patch_feats.T, axis=1)

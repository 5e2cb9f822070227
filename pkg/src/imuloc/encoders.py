"""Trainable IMU / point-cloud encoders and the frozen semantic table.

Both encoders end in l2 normalization, so every feature lives on the unit
sphere regardless of modality. Features are plain arrays or graph Tensors;
the modality is carried by the call site, not by a wrapper type.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .errors import CompatibilityError, ConfigError
from .numerics import (Tensor, add, broadcast, conv1d, l2_normalize, matmul,
                       maxpool, meanpool, relu, reshape)


@dataclass
class EncoderConfig:
    feature_dim: int = 64
    imu_rate_hz: int = 50
    imu_channels: tuple[int, int] = (16, 32)
    imu_kernel: int = 5
    imu_residual: bool = True
    point_channels: tuple[int, int] = (32, 64)
    patch_points: int = 1024
    image_noise_sigma: float = 0.1

    def validate(self) -> None:
        if self.feature_dim < 4:
            raise ConfigError(f"feature_dim must be >= 4, got {self.feature_dim}")
        if self.imu_kernel % 2 != 1:
            raise ConfigError("imu_kernel must be odd so padding keeps alignment")


@dataclass
class ImuEncoderParams:
    config: EncoderConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def checksum(self) -> str:
        return params_checksum(self.params)


@dataclass
class PointEncoderParams:
    config: EncoderConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def checksum(self) -> str:
        return params_checksum(self.params)


def params_checksum(params: dict[str, Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


def _uniform_init(gen: np.random.Generator, shape: tuple[int, ...],
                  fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(gen.uniform(-bound, bound, size=shape), requires_grad=True)


def init_encoders(config: EncoderConfig, seed: int) -> tuple[ImuEncoderParams, PointEncoderParams]:
    """Seeded fan-in-scaled uniform initialization for both encoders."""
    config.validate()
    d = config.feature_dim
    c1, c2 = config.imu_channels
    k = config.imu_kernel
    gen = seeding.rng(seed, seeding.ENCODER_INIT)

    imu = {
        "conv1_w": _uniform_init(gen, (c1, 6, k), 6 * k),
        "conv1_b": _uniform_init(gen, (c1,), 6 * k),
        "conv2_w": _uniform_init(gen, (c2, c1, k), c1 * k),
        "conv2_b": _uniform_init(gen, (c2,), c1 * k),
    }
    if config.imu_residual:
        imu["skip_w"] = _uniform_init(gen, (c2, c1, 1), c1)
    imu["head_w"] = _uniform_init(gen, (c2, d), c2)
    imu["head_b"] = _uniform_init(gen, (d,), c2)

    p1, p2 = config.point_channels
    point = {
        "mlp1_w": _uniform_init(gen, (3, p1), 3),
        "mlp1_b": _uniform_init(gen, (p1,), 3),
        "mlp2_w": _uniform_init(gen, (p1, p2), p1),
        "mlp2_b": _uniform_init(gen, (p2,), p1),
        "head_w": _uniform_init(gen, (p2, d), p2),
        "head_b": _uniform_init(gen, (d,), p2),
    }
    return ImuEncoderParams(config, imu), PointEncoderParams(config, point)


def encode_imu_batch(enc: ImuEncoderParams, windows: np.ndarray) -> Tensor:
    """Encode (B, rate, 6) windows into (B, D) unit-norm features."""
    cfg = enc.config
    if windows.ndim != 3 or windows.shape[1] != cfg.imu_rate_hz or windows.shape[2] != 6:
        raise CompatibilityError(
            f"expected windows shaped (B, {cfg.imu_rate_hz}, 6), got {windows.shape}")
    p = enc.params
    k = cfg.imu_kernel
    x = Tensor(np.ascontiguousarray(windows.transpose(0, 2, 1)))  # (B, 6, rate)
    h1 = relu(conv1d(x, p["conv1_w"], p["conv1_b"], stride=2, pad=k // 2))
    h2 = conv1d(h1, p["conv2_w"], p["conv2_b"], stride=1, pad=k // 2)
    if cfg.imu_residual:
        h2 = add(h2, conv1d(h1, p["skip_w"]))
    h2 = relu(h2)
    pooled = meanpool(h2, axis=2)  # (B, c2)
    b = windows.shape[0]
    d = cfg.feature_dim
    out = add(matmul(pooled, p["head_w"]),
              broadcast(reshape(p["head_b"], (1, d)), (b, d)))
    return l2_normalize(out, axis=1)


def encode_imu(enc: ImuEncoderParams, window: np.ndarray) -> Tensor:
    """Single one-second window -> unit-norm feature of shape (D,)."""
    feat = encode_imu_batch(enc, window[None, :, :])
    return reshape(feat, (enc.config.feature_dim,))


def encode_patch_batch(enc: PointEncoderParams, points: np.ndarray) -> Tensor:
    """Encode (B, N, 3) patches into (B, D) unit-norm features.

    The per-point MLP plus max-pool makes the output exactly invariant to
    point order within each patch.
    """
    cfg = enc.config
    if points.ndim != 3 or points.shape[1] != cfg.patch_points or points.shape[2] != 3:
        raise CompatibilityError(
            f"expected patches shaped (B, {cfg.patch_points}, 3), got {points.shape}")
    p = enc.params
    b, n, _ = points.shape
    p1, p2 = cfg.point_channels
    d = cfg.feature_dim
    flat = Tensor(points.reshape(b * n, 3))
    h = relu(add(matmul(flat, p["mlp1_w"]),
                 broadcast(reshape(p["mlp1_b"], (1, p1)), (b * n, p1))))
    h = relu(add(matmul(h, p["mlp2_w"]),
                 broadcast(reshape(p["mlp2_b"], (1, p2)), (b * n, p2))))
    pooled = maxpool(reshape(h, (b, n, p2)), axis=1)  # (B, p2)
    out = add(matmul(pooled, p["head_w"]),
              broadcast(reshape(p["head_b"], (1, d)), (b, d)))
    return l2_normalize(out, axis=1)


def encode_patch(enc: PointEncoderParams, patch_points: np.ndarray) -> Tensor:
    feat = encode_patch_batch(enc, patch_points[None, :, :])
    return reshape(feat, (enc.config.feature_dim,))


@dataclass(frozen=True)
class SemanticTable:
    """Frozen per-class unit vectors standing in for text/image embeddings."""
    vectors: np.ndarray          # (num_classes, D), orthonormal rows
    image_noise_sigma: float
    seed: int

    @property
    def num_classes(self) -> int:
        return self.vectors.shape[0]

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vectors).tobytes())
        h.update(np.float64(self.image_noise_sigma).tobytes())
        h.update(np.int64(self.seed).tobytes())
        return h.hexdigest()


def build_semantic_table(num_classes: int, feature_dim: int,
                         image_noise_sigma: float, seed: int) -> SemanticTable:
    """Random class directions, orthogonalized so classes never crowd."""
    if num_classes > feature_dim:
        raise ConfigError(
            f"cannot orthogonalize {num_classes} classes in {feature_dim} dims")
    gen = seeding.rng(seed, seeding.SEMANTIC_TABLE)
    raw = gen.normal(size=(num_classes, feature_dim))
    q, _ = np.linalg.qr(raw.T)
    vectors = np.ascontiguousarray(q.T[:num_classes])
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return SemanticTable(vectors, image_noise_sigma, seed)


def semantic_embed(table: SemanticTable, class_id: int, kind: str,
                   t: int, seed: int) -> np.ndarray:
    """Frozen embedding for one class at second ``t``.

    Text is the class vector itself; image adds a seeded per-(t, class)
    gaussian perturbation whose expected norm is sigma, then renormalizes.
    """
    if not 0 <= class_id < table.num_classes:
        raise CompatibilityError(f"unknown action class {class_id}")
    base = table.vectors[class_id]
    if kind == "text":
        return base.copy()
    if kind != "image":
        raise ConfigError(f"embed kind must be 'text' or 'image', got {kind!r}")
    sigma = table.image_noise_sigma
    if sigma == 0.0:
        return base.copy()
    gen = seeding.rng(seed, seeding.IMAGE_EMBED, int(t), class_id)
    scale = sigma / np.sqrt(base.shape[0])
    noisy = base + scale * gen.normal(size=base.shape)
    return noisy / np.linalg.norm(noisy)

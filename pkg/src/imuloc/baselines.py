"""Velocity-accumulation baseline: learn per-second displacement, integrate it.

The net sees windows rotated into the world frame with the simulator's
heading (the stand-in for device-orientation preprocessing), so direction
is observable from the gait signature orientation. Accumulated predictions
are deliberately left unclamped: drifting outside the scene is the behavior
this baseline exists to exhibit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .errors import ConfigError, DataError, ShapeMismatchError
from .numerics import (AdamW, AdamWConfig, Tensor, add, backward, broadcast,
                       conv1d, matmul, meanpool, mul, mul_scalar, precision,
                       relu, reshape)


@dataclass
class VelocityConfig:
    # kernel 9 at 50 Hz spans most of a gait period after one stride, which
    # the direction estimate needs
    channels: tuple[int, int] = (24, 48)
    kernel: int = 9
    batch_size: int = 64
    steps: int = 1500
    lr: float = 1e-3
    weight_decay: float = 0.01
    train_dtype: str = "float32"


@dataclass
class VelocityNetParams:
    config: VelocityConfig
    rate_hz: int
    params: dict[str, Tensor] = field(default_factory=dict)

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())


def init_velocity_net(cfg: VelocityConfig, rate_hz: int, seed: int) -> VelocityNetParams:
    if cfg.kernel % 2 != 1:
        raise ConfigError("velocity net kernel must be odd")
    c1, c2 = cfg.channels
    k = cfg.kernel
    gen = seeding.rng(seed, seeding.VELOCITY_INIT)

    def u(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(gen.uniform(-bound, bound, size=shape), requires_grad=True)

    params = {
        "conv1_w": u((c1, 6, k), 6 * k), "conv1_b": u((c1,), 6 * k),
        "conv2_w": u((c2, c1, k), c1 * k), "conv2_b": u((c2,), c1 * k),
        "head_w": u((c2, 2), c2), "head_b": u((2,), c2),
    }
    return VelocityNetParams(cfg, rate_hz, params)


def displacement_batch(net: VelocityNetParams, windows: np.ndarray) -> Tensor:
    """Predicted per-second world displacements, (B, 2)."""
    if windows.ndim != 3 or windows.shape[1] != net.rate_hz or windows.shape[2] != 6:
        raise ShapeMismatchError(
            f"expected windows shaped (B, {net.rate_hz}, 6), got {windows.shape}")
    p = net.params
    k = net.config.kernel
    b = windows.shape[0]
    x = Tensor(np.ascontiguousarray(windows.transpose(0, 2, 1)))
    h = relu(conv1d(x, p["conv1_w"], p["conv1_b"], stride=2, pad=k // 2))
    h = relu(conv1d(h, p["conv2_w"], p["conv2_b"], stride=2, pad=k // 2))
    pooled = meanpool(h, axis=2)
    return add(matmul(pooled, p["head_w"]),
               broadcast(reshape(p["head_b"], (1, 2)), (b, 2)))


def rotate_to_world(samples: np.ndarray, headings: np.ndarray) -> np.ndarray:
    """Rotate body-frame xy components into the world frame by the heading."""
    if samples.shape[0] != headings.shape[0]:
        raise ShapeMismatchError(
            f"rotate_to_world: {samples.shape[0]} samples vs {headings.shape[0]} headings")
    c = np.cos(headings)
    s = np.sin(headings)
    out = samples.copy()
    out[:, 0] = c * samples[:, 0] - s * samples[:, 1]
    out[:, 1] = s * samples[:, 0] + c * samples[:, 1]
    out[:, 3] = c * samples[:, 3] - s * samples[:, 4]
    out[:, 4] = s * samples[:, 3] + c * samples[:, 4]
    return out


def train_velocity_net(windows: np.ndarray, displacements: np.ndarray,
                       cfg: VelocityConfig, rate_hz: int, seed: int
                       ) -> tuple[VelocityNetParams, list[tuple[int, float]]]:
    """Mean-squared-error regression onto per-second displacements."""
    if windows.shape[0] == 0:
        raise DataError("velocity training set is empty")
    if windows.shape[0] != displacements.shape[0]:
        raise ShapeMismatchError(
            f"{windows.shape[0]} windows vs {displacements.shape[0]} displacement targets")
    if cfg.train_dtype not in ("float32", "float64"):
        raise ConfigError(f"train_dtype must be float32 or float64, got {cfg.train_dtype!r}")
    trace: list[tuple[int, float]] = []
    with precision(cfg.train_dtype):
        net = init_velocity_net(cfg, rate_hz, seed)
        opt = AdamW(net.params, AdamWConfig(lr=cfg.lr, weight_decay=cfg.weight_decay))
        gen = seeding.rng(seed, seeding.VELOCITY_TRAIN)
        n = windows.shape[0]
        bsz = min(cfg.batch_size, n)
        for step in range(cfg.steps):
            idx = gen.choice(n, size=bsz, replace=False)
            pred = displacement_batch(net, windows[idx])
            target = Tensor(displacements[idx])
            diff = add(pred, mul_scalar(target, -1.0))
            loss = meanpool(meanpool(mul(diff, diff), 1), 0)
            opt.zero_grad()
            backward(loss)
            opt.step()
            trace.append((step, loss.item()))
    return net, trace


def accumulate(displacements: np.ndarray, z0) -> np.ndarray:
    """Integrate per-second displacements from a known start.

    Row k of the result is the position after k seconds; row 0 is ``z0``.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    out = np.empty((displacements.shape[0] + 1, 2))
    out[0] = z0
    np.cumsum(displacements, axis=0, out=out[1:])
    out[1:] += z0
    return out


def dead_reckon(net: VelocityNetParams, windows: np.ndarray, z0) -> np.ndarray:
    """Predicted per-second trajectory of length K from K windows.

    Position k sits at the start of second k: window k-1 spans exactly the
    interval between positions k-1 and k, so each window contributes one
    integrated displacement. Position 0 is the given start.
    """
    if windows.shape[0] < 1:
        raise DataError("dead_reckon needs at least one window")
    disps = displacement_batch(net, windows[:-1]).data if windows.shape[0] > 1 \
        else np.zeros((0, 2))
    return accumulate(disps, z0)


def drift_curve(pred_trajs: list[np.ndarray], gt_trajs: list[np.ndarray]) -> np.ndarray:
    """Mean position error per elapsed second across sequences."""
    if len(pred_trajs) != len(gt_trajs) or not pred_trajs:
        raise ShapeMismatchError("drift_curve: need matching non-empty trajectory lists")
    length = pred_trajs[0].shape[0]
    errors = np.zeros(length)
    for pred, gt in zip(pred_trajs, gt_trajs):
        if pred.shape != gt.shape or pred.shape[0] != length:
            raise ShapeMismatchError(
                f"drift_curve: trajectory shapes differ ({pred.shape} vs {gt.shape})")
        errors += np.linalg.norm(pred - gt, axis=1)
    return errors / len(pred_trajs)

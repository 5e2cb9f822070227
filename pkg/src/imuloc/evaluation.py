"""Localization and action-recognition metrics plus the JSON report writer."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .errors import ConfigError, DataError, ShapeMismatchError
from .world import SegmentGrid

# Conventions baked into this artifact that a reader of the numbers should
# know about; echoed verbatim into every report.
CONVENTIONS = (
    "contrastive loss: symmetric InfoNCE over in-batch negatives, temperature 0.07",
    "relative score: ties get half credit, denominator excludes the true segment",
    "argmax ties broken toward the lowest segment index",
    "heatmap temperature 0.07 for both stages",
    "unseen split: scenes and trajectory seeds disjoint from training",
    "dead reckoning consumes windows rotated to the world frame by the true heading",
)


@dataclass
class EvalConfig:
    thresholds_m: tuple[float, ...] = (0.2, 0.4, 0.6)
    topk: tuple[int, ...] = (1, 5)
    chance_draws: int = 100_000

    def validate(self) -> None:
        th = self.thresholds_m
        if not th or any(t <= 0 for t in th) or list(th) != sorted(th):
            raise ConfigError(f"thresholds must be positive ascending, got {th}")
        if any(k < 1 for k in self.topk):
            raise ConfigError("topk entries must be >= 1")


def success_rate(pred: np.ndarray, gt: np.ndarray, threshold: float) -> float:
    """Fraction of steps with position error within ``threshold`` meters."""
    if pred.shape != gt.shape:
        raise ShapeMismatchError(
            f"success_rate: trajectory shapes differ ({pred.shape} vs {gt.shape})")
    err = np.linalg.norm(pred - gt, axis=1)
    return float((err <= threshold).mean())


def relative_score(heat_slice: np.ndarray, true_segment: int) -> float:
    """Proportion of other segments scoring strictly below the true one.

    Ties count half; the denominator is S - 1, so a delta heatmap at the true
    segment scores 1.0 and a uniform heatmap scores 0.5.
    """
    s = heat_slice.shape[0]
    if not 0 <= true_segment < s:
        raise DataError(f"relative_score: segment {true_segment} out of range [0, {s})")
    ref = heat_slice[true_segment]
    others = np.delete(heat_slice, true_segment)
    lower = float((others < ref).sum())
    equal = float((others == ref).sum())
    return (lower + 0.5 * equal) / (s - 1)


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose label is among the k highest logits.

    Ties rank lower indices first, matching the argmax convention.
    """
    n, n_classes = logits.shape
    if k > n_classes:
        raise ConfigError(f"top-{k} undefined with {n_classes} classes")
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float((order == np.asarray(labels)[:, None]).any(axis=1).mean())


def chance_success_rate(grid: SegmentGrid, gt_points: np.ndarray, threshold: float,
                        n_draws: int, seed: int) -> float:
    """Monte-Carlo success rate of a uniform-random segment predictor."""
    gen = seeding.rng(seed, seeding.CHANCE_MC)
    pts = gt_points[gen.integers(gt_points.shape[0], size=n_draws)]
    cells = grid.centers[gen.integers(grid.num_segments, size=n_draws)]
    err = np.linalg.norm(pts - cells, axis=1)
    return float((err <= threshold).mean())


@dataclass
class EvalReport:
    config_hash: str
    seed: int
    splits: dict = field(default_factory=dict)
    chance: dict = field(default_factory=dict)
    conventions: tuple[str, ...] = CONVENTIONS

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "conventions": list(self.conventions),
            "chance": self.chance,
            "splits": self.splits,
        }


def write_report(report: EvalReport | dict, path: Path | str) -> None:
    """JSON with stable key order; two runs with equal inputs match byte-for-byte."""
    doc = report.to_dict() if isinstance(report, EvalReport) else report
    payload = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    try:
        Path(path).write_text(payload)
    except OSError as exc:
        raise DataError(f"cannot write report to {path}: {exc}") from exc


def read_report(path: Path | str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc

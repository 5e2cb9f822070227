"""Synthetic indoor scenes: anchored point clouds and the uniform floor grid.

A scene is a square floor with a handful of "anchors" (sink, stove, ...);
each anchor drops a point cluster with a type-specific height profile, so
local geometry around an anchor is measurably distinct from anywhere else.
That separability is the signal the rest of the pipeline feeds on.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .errors import ConfigError, DataError

CEILING_M = 2.5


@dataclass(frozen=True)
class AnchorType:
    id: int
    name: str
    z_range: tuple[float, float]     # meters above floor
    lateral_spread: float            # gaussian sigma in xy, meters
    density_weight: float = 1.0

    def __post_init__(self):
        if self.lateral_spread <= 0:
            raise ConfigError(f"anchor {self.name!r}: spread must be positive")
        lo, hi = self.z_range
        if not (0.0 <= lo <= hi <= CEILING_M):
            raise ConfigError(f"anchor {self.name!r}: bad z range {self.z_range}")

    @property
    def mean_height(self) -> float:
        return 0.5 * (self.z_range[0] + self.z_range[1])


# Type means are spaced >= 0.15 m apart, and narrow/wide z-spans alternate up
# the height ladder so adjacent types separate on variance even where floor
# dilution squeezes patch means together.
DEFAULT_ANCHOR_TYPES = (
    AnchorType(0, "open_floor", (0.0, 0.02), 0.38, 0.5),
    AnchorType(1, "trash_bin", (0.26, 0.34), 0.10, 0.8),
    AnchorType(2, "dishwasher", (0.33, 0.61), 0.16, 1.0),
    AnchorType(3, "table", (0.60, 0.68), 0.22, 1.0),
    AnchorType(4, "sink", (0.70, 1.00), 0.14, 1.2),
    AnchorType(5, "counter", (0.98, 1.06), 0.20, 1.0),
    AnchorType(6, "stove", (1.02, 1.40), 0.16, 1.1),
    AnchorType(7, "shelf", (1.35, 1.43), 0.18, 0.9),
    AnchorType(8, "fridge", (1.30, 1.90), 0.15, 1.1),
    AnchorType(9, "cabinet", (1.81, 1.89), 0.17, 1.0),
)

ANCHOR_TYPES_BY_NAME = {t.name: t for t in DEFAULT_ANCHOR_TYPES}


@dataclass(frozen=True)
class Anchor:
    type: AnchorType
    x: float
    y: float

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Scene:
    extent_m: float
    anchors: tuple[Anchor, ...]
    seed: int


@dataclass(frozen=True)
class ScenePointCloud:
    extent_m: float
    points: np.ndarray  # (n, 3) float64

    def __post_init__(self):
        if self.points.size == 0:
            raise DataError("point cloud is empty")


@dataclass(frozen=True)
class SegmentGrid:
    extent_m: float
    cells_per_side: int

    @property
    def cell_side_m(self) -> float:
        return self.extent_m / self.cells_per_side

    @property
    def num_segments(self) -> int:
        return self.cells_per_side ** 2

    @property
    def centers(self) -> np.ndarray:
        """(S, 2) array; segment s = row * G + col, row indexes y."""
        g = self.cells_per_side
        cs = self.cell_side_m
        cols, rows = np.meshgrid(np.arange(g), np.arange(g))
        return np.stack([(cols.ravel() + 0.5) * cs, (rows.ravel() + 0.5) * cs], axis=1)


@dataclass(frozen=True)
class SegmentPatch:
    segment_index: int
    points: np.ndarray  # (N, 3): xy re-centered on the patch center, z absolute
    patch_side_m: float


@dataclass
class SceneConfig:
    extent_m: float = 4.5
    anchor_counts: dict[str, int] = field(default_factory=lambda: {
        "sink": 1, "stove": 1, "counter": 1, "table": 1, "cabinet": 1,
        "trash_bin": 1, "dishwasher": 1, "shelf": 1, "fridge": 1, "open_floor": 2})
    points_per_anchor: int = 600
    floor_density_per_m2: float = 300.0
    min_anchor_distance_m: float = 0.85
    wall_margin_m: float = 0.4


def generate_scene(config: SceneConfig, seed: int) -> tuple[Scene, ScenePointCloud]:
    """Place anchors by rejection sampling and sample the cloud around them."""
    if not 2.5 <= config.extent_m <= 6.5:
        raise ConfigError(f"scene extent {config.extent_m} outside [2.5, 6.5] m")
    n_anchors = sum(config.anchor_counts.values())
    if n_anchors < 3:
        raise ConfigError(f"need at least 3 anchors, got {n_anchors}")
    for name in config.anchor_counts:
        if name not in ANCHOR_TYPES_BY_NAME:
            raise ConfigError(f"unknown anchor type {name!r}")

    gen = seeding.rng(seed, seeding.SCENE)
    L = config.extent_m
    lo, hi = config.wall_margin_m, L - config.wall_margin_m
    placed: list[Anchor] = []
    for name in sorted(config.anchor_counts):
        atype = ANCHOR_TYPES_BY_NAME[name]
        for _ in range(config.anchor_counts[name]):
            for attempt in range(1000):
                xy = gen.uniform(lo, hi, size=2)
                if all(np.hypot(xy[0] - a.x, xy[1] - a.y) >= config.min_anchor_distance_m
                       for a in placed):
                    placed.append(Anchor(atype, float(xy[0]), float(xy[1])))
                    break
            else:
                raise DataError(
                    f"could not place anchor {name!r} after 1000 attempts "
                    f"(extent {L} m, {len(placed)} placed)")

    scene = Scene(extent_m=L, anchors=tuple(placed), seed=seed)

    chunks = []
    n_floor = int(round(config.floor_density_per_m2 * L * L))
    floor = np.empty((n_floor, 3))
    floor[:, 0] = gen.uniform(0.0, L, n_floor)
    floor[:, 1] = gen.uniform(0.0, L, n_floor)
    floor[:, 2] = gen.uniform(0.0, 0.02, n_floor)
    chunks.append(floor)
    for anchor in placed:
        n = int(round(config.points_per_anchor * anchor.type.density_weight))
        xy = _sample_cluster(gen, anchor.xy, anchor.type.lateral_spread, n, L)
        z = gen.uniform(anchor.type.z_range[0], anchor.type.z_range[1], n)
        chunks.append(np.column_stack([xy, z]))
    points = np.concatenate(chunks, axis=0)
    return scene, ScenePointCloud(extent_m=L, points=points)


def _sample_cluster(gen: np.random.Generator, center: np.ndarray, spread: float,
                    n: int, extent: float) -> np.ndarray:
    """Gaussian blob in xy, redrawing any sample that falls outside the floor."""
    xy = center + gen.normal(scale=spread, size=(n, 2))
    for _ in range(64):
        bad = (xy < 0.0).any(axis=1) | (xy > extent).any(axis=1)
        if not bad.any():
            return xy
        xy[bad] = center + gen.normal(scale=spread, size=(int(bad.sum()), 2))
    return np.clip(xy, 0.0, extent)


def partition(cloud: ScenePointCloud, cells_per_side: int) -> SegmentGrid:
    if cells_per_side < 2:
        raise ConfigError(f"grid must have >= 2 cells per side, got {cells_per_side}")
    return SegmentGrid(extent_m=cloud.extent_m, cells_per_side=cells_per_side)


def nearest_segment(xy, grid: SegmentGrid) -> int:
    """Cell containing (x, y); floor convention on boundaries, clamped outside."""
    x, y = float(xy[0]), float(xy[1])
    g = grid.cells_per_side
    cs = grid.cell_side_m
    col = min(max(int(np.floor(x / cs)), 0), g - 1)
    row = min(max(int(np.floor(y / cs)), 0), g - 1)
    return row * g + col


def segments_of(points: np.ndarray, grid: SegmentGrid) -> np.ndarray:
    """Vectorized nearest_segment for an (n, 2) array."""
    g = grid.cells_per_side
    cs = grid.cell_side_m
    col = np.clip(np.floor(points[:, 0] / cs).astype(np.int64), 0, g - 1)
    row = np.clip(np.floor(points[:, 1] / cs).astype(np.int64), 0, g - 1)
    return row * g + col


def patch_at(cloud: ScenePointCloud, center, n_points: int = 1024,
             patch_side_m: float = 1.0, seed: int = 0,
             segment_index: int = -1) -> SegmentPatch:
    """Fixed-size local patch around ``center``.

    Points whose xy falls inside the square are subsampled to ``n_points``;
    a sparse region is padded with floor-plane samples (z = 0) so the size
    contract always holds. xy is re-centered so the patch is position-free.
    """
    cx, cy = float(center[0]), float(center[1])
    half = patch_side_m / 2.0
    pts = cloud.points
    inside = ((np.abs(pts[:, 0] - cx) <= half) & (np.abs(pts[:, 1] - cy) <= half))
    local = pts[inside].copy()
    local[:, 0] -= cx
    local[:, 1] -= cy
    gen = seeding.rng(seed, seeding.PATCH)
    if local.shape[0] >= n_points:
        keep = gen.choice(local.shape[0], size=n_points, replace=False)
        local = local[keep]
    else:
        n_pad = n_points - local.shape[0]
        pad = np.zeros((n_pad, 3))
        pad[:, :2] = gen.uniform(-half, half, size=(n_pad, 2))
        local = np.concatenate([local, pad], axis=0)
    return SegmentPatch(segment_index=segment_index, points=local,
                        patch_side_m=patch_side_m)


def grid_patches(cloud: ScenePointCloud, grid: SegmentGrid, n_points: int,
                 patch_side_m: float, seed: int) -> list[SegmentPatch]:
    """One patch per grid cell, centered on the cell center.

    Patch seeds derive from (seed, cell index) so the same scene always
    yields the same patches, at generation and at evaluation time.
    """
    centers = grid.centers
    return [patch_at(cloud, centers[s], n_points, patch_side_m,
                     seed=seed * grid.num_segments + s, segment_index=s)
            for s in range(grid.num_segments)]

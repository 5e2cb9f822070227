"""Shared fixtures: a tiny end-to-end workspace and the desk benchmark."""
from __future__ import annotations

import json
import os
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from imuloc.config import RunConfig
from imuloc import pipeline

TINY_CONFIG = {
    "seed": 11,
    "world": {"extent_m": 3.2, "grid_cells": 10, "patch_points": 128,
              "points_per_anchor": 200, "floor_density_per_m2": 120,
              "anchor_counts": {"sink": 1, "stove": 1, "table": 1,
                                "cabinet": 1, "open_floor": 1}},
    "motion": {"trajectory_s": 20.0, "n_action_classes": 7},
    "dataset": {"train_scenes": 2, "trajs_per_scene": 3, "seen_test_scenes": 1,
                "unseen_test_scenes": 1, "test_trajs_per_scene": 1},
    "encoders": {"feature_dim": 16, "imu_channels": [8, 12], "point_channels": [12, 16]},
    "stage1": {"steps": 30, "batch_size": 16, "warmup_steps": 10},
    "stage2": {"steps": 12, "batch_size": 2, "channels": 6, "sequence_len": 5},
    "velocity": {"steps": 20, "batch_size": 16},
}


def tiny_config() -> RunConfig:
    return RunConfig.from_dict(json.loads(json.dumps(TINY_CONFIG)))


@dataclass
class Workspace:
    root: Path
    dataset: pipeline.Dataset
    stage1_path: Path
    stage2_path: Path
    velocity_path: Path
    report_path: Path
    report: dict


def build_workspace(root: Path, seed: int | None = None) -> Workspace:
    cfg = tiny_config()
    if seed is not None:
        cfg.seed = seed
    pipeline.generate_dataset(cfg, root / "data")
    ds = pipeline.Dataset.load(root / "data")
    pipeline.run_train_stage1(ds, root / "s1.ckpt")
    pipeline.run_train_stage2(ds, root / "s1.ckpt", root / "s2.ckpt")
    pipeline.run_train_velocity(ds, root / "vel.ckpt")
    report = pipeline.run_eval(ds, root / "s1.ckpt", root / "s2.ckpt",
                               root / "vel.ckpt", root / "report.json",
                               drift_csv_path=root / "drift.csv")
    return Workspace(root, ds, root / "s1.ckpt", root / "s2.ckpt",
                     root / "vel.ckpt", root / "report.json", report)


@pytest.fixture(scope="session")
def tiny_workspace(tmp_path_factory) -> Workspace:
    """One fully trained tiny pipeline shared by integration tests."""
    return build_workspace(tmp_path_factory.mktemp("tiny_ws"))


# ---------------------------------------------------------------------------
# desk benchmark (acceptance criteria 4-6)

BENCH_SEEDS = (1, 2, 3)


@dataclass
class BenchmarkRun:
    seed: int
    root: Path
    report: dict
    report_noact: dict
    stage1_trace: list[tuple[int, float]]


@dataclass
class Benchmark:
    runs: list[BenchmarkRun]
    wall_seconds: float

    def mean_over_seeds(self, picker) -> float:
        return float(np.mean([picker(r) for r in self.runs]))


def _seed_commands(root: Path, seed: int) -> list[list[str]]:
    d = str(root / "data")
    return [
        [sys.executable, "-m", "imuloc.cli", "gen", "--seed", str(seed), "--out", d],
        [sys.executable, "-m", "imuloc.cli", "train", "--stage", "1", "--data", d,
         "--out", str(root / "s1.ckpt")],
        [sys.executable, "-m", "imuloc.cli", "train", "--stage", "2", "--data", d,
         "--stage1-ckpt", str(root / "s1.ckpt"), "--out", str(root / "s2.ckpt")],
        [sys.executable, "-m", "imuloc.cli", "train", "--stage", "2", "--data", d,
         "--stage1-ckpt", str(root / "s1.ckpt"), "--no-action-loss",
         "--out", str(root / "s2_noact.ckpt")],
        [sys.executable, "-m", "imuloc.cli", "train", "--stage", "velocity",
         "--data", d, "--out", str(root / "vel.ckpt")],
        [sys.executable, "-m", "imuloc.cli", "eval", "--data", d,
         "--stage1", str(root / "s1.ckpt"), "--stage2", str(root / "s2.ckpt"),
         "--velocity", str(root / "vel.ckpt"), "--out", str(root / "report.json"),
         "--drift-csv", str(root / "drift.csv")],
        [sys.executable, "-m", "imuloc.cli", "eval", "--data", d,
         "--stage1", str(root / "s1.ckpt"), "--stage2", str(root / "s2_noact.ckpt"),
         "--velocity", str(root / "vel.ckpt"),
         "--out", str(root / "report_noact.json")],
    ]


def _run_seed_pipeline(root: Path, seed: int, env: dict) -> None:
    root.mkdir(parents=True, exist_ok=True)
    log = (root / "pipeline.log").open("w")
    for cmd in _seed_commands(root, seed):
        proc = subprocess.run(cmd, env=env, stdout=log, stderr=subprocess.STDOUT)
        if proc.returncode != 0:
            log.close()
            raise RuntimeError(
                f"benchmark command failed ({proc.returncode}): {' '.join(cmd)}\n"
                f"{(root / 'pipeline.log').read_text()[-2000:]}")
    log.close()


def _read_trace(path: Path) -> list[tuple[int, float]]:
    rows = path.read_text().strip().splitlines()[1:]
    return [(int(r.split(",")[0]), float(r.split(",")[1])) for r in rows]


@pytest.fixture(scope="session")
def desk_benchmark(tmp_path_factory) -> Benchmark:
    """Full default-config pipelines for seeds 1-3.

    The three seeds run concurrently as CLI subprocesses, each pinned to one
    BLAS thread: determinism is per-process and the box stays saturated.
    Set IMULOC_BENCH_DIR to reuse a previous run while iterating.
    """
    cache = os.environ.get("IMULOC_BENCH_DIR")
    base = Path(cache) if cache else tmp_path_factory.mktemp("bench")
    env = dict(os.environ)
    env["OPENBLAS_NUM_THREADS"] = "1"
    env["OMP_NUM_THREADS"] = "1"

    t0 = time.time()
    pending = []
    for seed in BENCH_SEEDS:
        root = base / f"seed{seed}"
        if (root / "report_noact.json").exists():
            continue
        pending.append((root, seed))
    procs: list = []
    import threading
    errors: list[BaseException] = []

    def worker(item):
        try:
            _run_seed_pipeline(*item, env=env)
        except BaseException as exc:  # surface in the main thread
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(item,)) for item in pending]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    wall = time.time() - t0

    runs = []
    for seed in BENCH_SEEDS:
        root = base / f"seed{seed}"
        runs.append(BenchmarkRun(
            seed=seed,
            root=root,
            report=json.loads((root / "report.json").read_text()),
            report_noact=json.loads((root / "report_noact.json").read_text()),
            stage1_trace=_read_trace(root / "s1.ckpt.trace.csv"),
        ))
    return Benchmark(runs=runs, wall_seconds=wall)

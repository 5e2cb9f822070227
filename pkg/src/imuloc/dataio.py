"""On-disk formats: dataset artifacts, checkpoints, traces, and exports.

Binary layouts are little-endian with explicit counts up front; checkpoints
are a length-prefixed JSON header followed by a float32 parameter blob in
header order. Everything written here is byte-deterministic given equal
inputs.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import VelocityConfig, VelocityNetParams
from .encoders import (EncoderConfig, ImuEncoderParams, PointEncoderParams,
                       encode_imu, encode_patch)
from .errors import CompatibilityError, DataError
from .motion import ImuStream, ActionScript
from .numerics import Tensor
from .stage1 import Stage1Checkpoint
from .stage2 import ReasonerParams, Stage2Checkpoint, Stage2Config
from .world import Anchor, ANCHOR_TYPES_BY_NAME, Scene, ScenePointCloud

FORMAT_VERSION = 1
PACKAGE_VERSION = "0.1.0"


# ---------------------------------------------------------------------------
# scene and cloud


def write_scene_json(scene: Scene, path: Path) -> None:
    doc = {
        "extent_m": scene.extent_m,
        "seed": scene.seed,
        "anchors": [{"type": a.type.name, "x": a.x, "y": a.y} for a in scene.anchors],
    }
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def read_scene_json(path: Path) -> Scene:
    try:
        doc = json.loads(path.read_text())
        anchors = tuple(Anchor(ANCHOR_TYPES_BY_NAME[a["type"]], float(a["x"]), float(a["y"]))
                        for a in doc["anchors"])
        return Scene(extent_m=float(doc["extent_m"]), anchors=anchors,
                     seed=int(doc["seed"]))
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"bad scene file {path}: {exc}") from exc


def write_cloud_bin(cloud: ScenePointCloud, path: Path) -> None:
    """uint64 LE point count, then count * 3 float32 (x, y, z) + extent trailer."""
    n = cloud.points.shape[0]
    with path.open("wb") as fh:
        fh.write(struct.pack("<Q", n))
        fh.write(cloud.points.astype("<f4").tobytes())
        fh.write(struct.pack("<f", cloud.extent_m))


def read_cloud_bin(path: Path) -> ScenePointCloud:
    try:
        raw = path.read_bytes()
        (n,) = struct.unpack_from("<Q", raw, 0)
        body = 8 + n * 12
        pts = np.frombuffer(raw, dtype="<f4", count=n * 3, offset=8)
        (extent,) = struct.unpack_from("<f", raw, body)
        return ScenePointCloud(extent_m=float(extent),
                               points=pts.reshape(n, 3).astype(np.float64))
    except (OSError, struct.error, ValueError) as exc:
        raise DataError(f"bad cloud file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# IMU stream, script, labels


def write_stream_bin(stream: ImuStream, path: Path) -> None:
    """uint64 rate, uint64 sample count, then count * 6 float32."""
    with path.open("wb") as fh:
        fh.write(struct.pack("<QQ", stream.rate_hz, stream.n_samples))
        fh.write(stream.samples.astype("<f4").tobytes())


def read_stream_bin(path: Path) -> ImuStream:
    try:
        raw = path.read_bytes()
        rate, n = struct.unpack_from("<QQ", raw, 0)
        samples = np.frombuffer(raw, dtype="<f4", count=n * 6, offset=16)
        return ImuStream(rate_hz=int(rate),
                         samples=samples.reshape(n, 6).astype(np.float64), seed=-1)
    except (OSError, struct.error, ValueError) as exc:
        raise DataError(f"bad stream file {path}: {exc}") from exc


def write_script_jsonl(script: ActionScript, path: Path) -> None:
    lines = []
    for ep in script.episodes:
        lines.append(json.dumps({
            "action": ep.action_id,
            "name": script.action_by_id(ep.action_id).name,
            "start_s": ep.start_s,
            "duration_s": ep.duration_s,
            "anchor": ep.anchor_index,
        }, sort_keys=True))
    path.write_text("\n".join(lines) + "\n")


def write_labels_csv(segments: np.ndarray, actions: np.ndarray, path: Path) -> None:
    rows = ["t,segment,action"]
    rows += [f"{t},{int(s)},{int(a)}" for t, (s, a) in enumerate(zip(segments, actions))]
    path.write_text("\n".join(rows) + "\n")


def read_labels_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        lines = path.read_text().strip().splitlines()
        body = [line.split(",") for line in lines[1:]]
        segments = np.array([int(r[1]) for r in body], dtype=np.int64)
        actions = np.array([int(r[2]) for r in body], dtype=np.int64)
        return segments, actions
    except (OSError, IndexError, ValueError) as exc:
        raise DataError(f"bad labels file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# checkpoints

PROBE_SEED = 2024


def _params_blob(params: dict[str, Tensor]) -> tuple[list, bytes]:
    entries = [[name, list(params[name].shape)] for name in params]
    blob = b"".join(np.ascontiguousarray(params[name].data).astype("<f4").tobytes()
                    for name in params)
    return entries, blob


def _read_params(entries: list, blob: bytes, requires_grad: bool) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    offset = 0
    for name, shape in entries:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        params[name] = Tensor(arr.reshape(shape).astype(np.float64),
                              requires_grad=requires_grad)
        offset += count * 4
    if offset != len(blob):
        raise DataError(f"checkpoint blob has {len(blob) - offset} trailing bytes")
    return params


def _write_container(header: dict, blob: bytes, path: Path) -> None:
    head = json.dumps(header, sort_keys=True).encode()
    with path.open("wb") as fh:
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(blob)


def _read_container(path: Path, expected_kind: str) -> tuple[dict, bytes]:
    try:
        raw = path.read_bytes()
        (hlen,) = struct.unpack_from("<Q", raw, 0)
        header = json.loads(raw[8:8 + hlen].decode())
        blob = raw[8 + hlen:]
    except (OSError, struct.error, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"bad checkpoint file {path}: {exc}") from exc
    if header.get("kind") != expected_kind:
        raise CompatibilityError(
            f"{path} holds a {header.get('kind')!r} checkpoint, expected {expected_kind!r}")
    if header.get("format_version") != FORMAT_VERSION:
        raise CompatibilityError(
            f"{path}: format version {header.get('format_version')} unsupported")
    return header, blob


def _probe_features(imu_enc: ImuEncoderParams, point_enc: PointEncoderParams
                    ) -> dict[str, list[float]]:
    gen = np.random.Generator(np.random.PCG64(PROBE_SEED))
    window = gen.normal(size=(imu_enc.config.imu_rate_hz, 6))
    patch = gen.normal(size=(point_enc.config.patch_points, 3))
    return {
        "imu_feature": np.asarray(encode_imu(imu_enc, window).data,
                                  dtype="<f4").tolist(),
        "point_feature": np.asarray(encode_patch(point_enc, patch).data,
                                    dtype="<f4").tolist(),
    }


def save_stage1_checkpoint(ckpt: Stage1Checkpoint, dataset_hash: str,
                           path: Path) -> None:
    """Parameters are rounded to float32 first so the stored probe features
    reproduce exactly on reload."""
    merged = {f"imu.{k}": v for k, v in ckpt.imu_enc.params.items()}
    merged.update({f"point.{k}": v for k, v in ckpt.point_enc.params.items()})
    entries, blob = _params_blob(merged)
    rounded = _read_params(entries, blob, requires_grad=False)
    imu_r = ImuEncoderParams(ckpt.imu_enc.config, {
        k[len("imu."):]: v for k, v in rounded.items() if k.startswith("imu.")})
    point_r = PointEncoderParams(ckpt.point_enc.config, {
        k[len("point."):]: v for k, v in rounded.items() if k.startswith("point.")})
    header = {
        "kind": "stage1",
        "format_version": FORMAT_VERSION,
        "package_version": PACKAGE_VERSION,
        "dataset_hash": dataset_hash,
        "encoder_config": asdict(ckpt.imu_enc.config),
        "stage1_config": asdict(ckpt.config),
        "table_checksum": ckpt.table_checksum,
        "final_loss": ckpt.final_loss,
        "params": entries,
        "probe": _probe_features(imu_r, point_r),
    }
    _write_container(header, blob, path)


def load_stage1_checkpoint(path: Path) -> tuple[ImuEncoderParams, PointEncoderParams, dict]:
    header, blob = _read_container(path, "stage1")
    enc_cfg = EncoderConfig(**{k: tuple(v) if isinstance(v, list) else v
                               for k, v in header["encoder_config"].items()})
    params = _read_params(header["params"], blob, requires_grad=False)
    imu = ImuEncoderParams(enc_cfg, {k[len("imu."):]: v for k, v in params.items()
                                     if k.startswith("imu.")})
    point = PointEncoderParams(enc_cfg, {k[len("point."):]: v for k, v in params.items()
                                         if k.startswith("point.")})
    probe = header["probe"]
    check = _probe_features(imu, point)
    for key in ("imu_feature", "point_feature"):
        stored = np.array(probe[key])
        fresh = np.array(check[key])
        if not np.all(np.abs(stored - fresh) <= 1e-6):  # NaN also fails here
            raise DataError(f"{path}: probe feature {key} mismatch; checkpoint corrupt")
    return imu, point, header


def save_stage2_checkpoint(ckpt: Stage2Checkpoint, dataset_hash: str, path: Path) -> None:
    entries, blob = _params_blob(ckpt.reasoner.params)
    header = {
        "kind": "stage2",
        "format_version": FORMAT_VERSION,
        "package_version": PACKAGE_VERSION,
        "dataset_hash": dataset_hash,
        "stage2_config": asdict(ckpt.config),
        "feature_dim": ckpt.feature_dim,
        "grid_cells": ckpt.grid_cells,
        "n_actions": ckpt.n_actions,
        "imu_checksum": ckpt.imu_checksum,
        "point_checksum": ckpt.point_checksum,
        "final_loss": ckpt.final_loss,
        "params": entries,
    }
    _write_container(header, blob, path)


def load_stage2_checkpoint(path: Path) -> tuple[ReasonerParams, dict]:
    header, blob = _read_container(path, "stage2")
    cfg = Stage2Config(**header["stage2_config"])
    params = _read_params(header["params"], blob, requires_grad=False)
    reasoner = ReasonerParams(cfg, header["feature_dim"], header["grid_cells"],
                              header["n_actions"], params)
    return reasoner, header


def save_velocity_checkpoint(net: VelocityNetParams, dataset_hash: str,
                             final_loss: float, path: Path) -> None:
    entries, blob = _params_blob(net.params)
    header = {
        "kind": "velocity",
        "format_version": FORMAT_VERSION,
        "package_version": PACKAGE_VERSION,
        "dataset_hash": dataset_hash,
        "velocity_config": asdict(net.config),
        "rate_hz": net.rate_hz,
        "final_loss": final_loss,
        "params": entries,
    }
    _write_container(header, blob, path)


def load_velocity_checkpoint(path: Path) -> tuple[VelocityNetParams, dict]:
    header, blob = _read_container(path, "velocity")
    cfg = VelocityConfig(**{k: tuple(v) if isinstance(v, list) else v
                            for k, v in header["velocity_config"].items()})
    params = _read_params(header["params"], blob, requires_grad=False)
    return VelocityNetParams(cfg, header["rate_hz"], params), header


# ---------------------------------------------------------------------------
# traces and exports


def write_trace_csv(rows: list[tuple], columns: tuple[str, ...], path: Path) -> None:
    lines = [",".join(columns)]
    lines += [",".join(repr(v) if isinstance(v, float) else str(v) for v in row)
              for row in rows]
    path.write_text("\n".join(lines) + "\n")


def write_heatmap_csv(heat_slice: np.ndarray, grid_cells: int, path: Path) -> None:
    grid = heat_slice.reshape(grid_cells, grid_cells)
    lines = [",".join(f"{v:.10g}" for v in row) for row in grid]
    path.write_text("\n".join(lines) + "\n")


def write_heatmap_pgm(heat_slice: np.ndarray, grid_cells: int, path: Path) -> None:
    """8-bit binary PGM, values scaled so the slice maximum maps to 255."""
    grid = heat_slice.reshape(grid_cells, grid_cells)
    peak = grid.max()
    scaled = np.zeros_like(grid, dtype=np.uint8) if peak <= 0 else \
        np.floor(grid / peak * 255.0 + 0.5).astype(np.uint8)
    with path.open("wb") as fh:
        fh.write(f"P5\n{grid_cells} {grid_cells}\n255\n".encode())
        fh.write(scaled.tobytes())


def write_predictions_csv(positions: np.ndarray, segments: np.ndarray,
                          actions: np.ndarray, confidences: np.ndarray,
                          path: Path) -> None:
    lines = ["t,x,y,segment,action,confidence"]
    for t in range(positions.shape[0]):
        lines.append(f"{t},{positions[t, 0]!r},{positions[t, 1]!r},"
                     f"{int(segments[t])},{int(actions[t])},{confidences[t]!r}")
    path.write_text("\n".join(lines) + "\n")

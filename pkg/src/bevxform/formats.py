"""File formats: rig and scene JSON, the binary tensor container, and PGM maps.

Every loader failure raises FormatError carrying a short machine-readable code
and a human detail string; the CLI turns these into single-line diagnostics.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .foreground import Box3D
from .geometry import Camera, Rig
from .pipeline import Scene

TENSOR_MAGIC = b"FBBT"
TENSOR_VERSION = 1


class FormatError(Exception):
    """I/O or validation failure with a stable error code."""

    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


def _read_file(path, code: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(code, f"cannot read {path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------- rig files

def _camera_from_doc(doc: dict, index: int) -> Camera:
    where = f"cameras[{index}]"
    if not isinstance(doc, dict):
        raise FormatError("rig-schema", f"{where} must be an object")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise FormatError("rig-schema", f"{where}.name must be a non-empty string")
    where = f"camera {name!r}"
    fields = {}
    for key, length in (("K", 9), ("R", 9), ("t", 3)):
        value = doc.get(key)
        if value is None:
            raise FormatError("rig-schema", f"{where}: missing field {key!r}")
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != (length,):
            raise FormatError("rig-schema", f"{where}: field {key!r} must hold {length} numbers")
        fields[key] = arr
    for key in ("width", "height", "stride"):
        if not isinstance(doc.get(key), int):
            raise FormatError("rig-schema", f"{where}: field {key!r} must be an integer")
    try:
        return Camera(
            name=name,
            width=doc["width"],
            height=doc["height"],
            intrinsics=fields["K"].reshape(3, 3),
            rotation=fields["R"].reshape(3, 3),
            translation=fields["t"],
            feature_stride=doc["stride"],
        )
    except ValueError as exc:
        raise FormatError("rig-invalid", str(exc)) from exc


def rig_from_json(text: str) -> Rig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError("rig-parse", f"invalid JSON: {exc}") from exc
    cams = doc.get("cameras") if isinstance(doc, dict) else None
    if not isinstance(cams, list) or not cams:
        raise FormatError("rig-schema", 'top level must be {"cameras": [...]} with at least one camera')
    try:
        return Rig(cameras=tuple(_camera_from_doc(c, i) for i, c in enumerate(cams)))
    except ValueError as exc:
        raise FormatError("rig-invalid", str(exc)) from exc


def load_rig(path) -> Rig:
    """Parse and validate a rig JSON file."""
    return rig_from_json(_read_file(path, "rig-io").decode("utf-8"))


def save_rig(path, rig: Rig) -> None:
    doc = {
        "cameras": [
            {
                "name": c.name,
                "width": c.width,
                "height": c.height,
                "stride": c.feature_stride,
                "K": [float(v) for v in c.intrinsics.ravel()],
                "R": [float(v) for v in c.rotation.ravel()],
                "t": [float(v) for v in c.translation.ravel()],
            }
            for c in rig
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# -------------------------------------------------------------- scene files

def scene_from_json(text: str, default_rig: Rig | None = None) -> Scene:
    """Parse a scene document; falls back to default_rig when none is embedded."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError("scene-parse", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError("scene-schema", "top level must be an object")
    if "rig" in doc:
        rig = rig_from_json(json.dumps(doc["rig"]))
    elif default_rig is not None:
        rig = default_rig
    else:
        raise FormatError("scene-schema", 'missing "rig" and no default rig supplied')
    boxes_doc = doc.get("boxes", [])
    if not isinstance(boxes_doc, list):
        raise FormatError("scene-schema", '"boxes" must be a list')
    boxes, features = [], []
    for i, b in enumerate(boxes_doc):
        try:
            boxes.append(
                Box3D(
                    center=np.asarray(b["center"], dtype=np.float64),
                    size=np.asarray(b["size"], dtype=np.float64),
                    yaw=float(b["yaw"]),
                )
            )
            features.append(np.asarray(b["feature"], dtype=np.float64))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError("scene-schema", f"boxes[{i}]: {exc}") from exc
    if features and len({f.shape for f in features}) != 1:
        raise FormatError("scene-schema", "all box features must share one length")
    channels = int(doc.get("channels", features[0].size if features else 1))
    feats = np.array(features, dtype=np.float64).reshape(len(boxes), -1) if boxes else np.zeros((0, channels))
    if boxes and feats.shape[1] != channels:
        raise FormatError("scene-schema", f"box features have {feats.shape[1]} channels, header says {channels}")
    try:
        return Scene(
            rig=rig,
            boxes=tuple(boxes),
            box_features=feats,
            ground_z=float(doc.get("ground_z", 0.0)),
            seed=int(doc.get("seed", 0)),
            depth_sigma=float(doc.get("depth_sigma", 2.0)),
        )
    except ValueError as exc:
        raise FormatError("scene-invalid", str(exc)) from exc


def load_scene(path, default_rig: Rig | None = None) -> Scene:
    return scene_from_json(_read_file(path, "scene-io").decode("utf-8"), default_rig=default_rig)


def save_scene(path, scene: Scene, embed_rig: bool = True) -> None:
    doc = {
        "ground_z": scene.ground_z,
        "seed": scene.seed,
        "depth_sigma": scene.depth_sigma,
        "channels": scene.channels,
        "boxes": [
            {
                "center": [float(v) for v in box.center],
                "size": [float(v) for v in box.size],
                "yaw": float(box.yaw),
                "feature": [float(v) for v in scene.box_features[i]],
            }
            for i, box in enumerate(scene.boxes)
        ],
    }
    if embed_rig:
        doc["rig"] = {
            "cameras": [
                {
                    "name": c.name,
                    "width": c.width,
                    "height": c.height,
                    "stride": c.feature_stride,
                    "K": [float(v) for v in c.intrinsics.ravel()],
                    "R": [float(v) for v in c.rotation.ravel()],
                    "t": [float(v) for v in c.translation.ravel()],
                }
                for c in scene.rig
            ]
        }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# ------------------------------------------------------------- tensor files

def save_tensor(path, data: np.ndarray) -> None:
    """Write an array as magic, version, rank, dims (u32 LE), then f32 LE payload."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    header = TENSOR_MAGIC + struct.pack("<II", TENSOR_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def load_tensor(path) -> np.ndarray:
    """Read a tensor file back; inverse of save_tensor, bit-exact on the payload."""
    raw = _read_file(path, "tensor-io")
    if len(raw) < 12:
        raise FormatError("tensor-truncated", f"{path}: file shorter than the fixed header")
    if raw[:4] != TENSOR_MAGIC:
        raise FormatError("tensor-magic", f"{path}: bad magic {raw[:4]!r}")
    version, rank = struct.unpack_from("<II", raw, 4)
    if version != TENSOR_VERSION:
        raise FormatError("tensor-version", f"{path}: unsupported version {version}")
    if rank > 32:
        raise FormatError("tensor-format", f"{path}: implausible rank {rank}")
    if len(raw) < 12 + 4 * rank:
        raise FormatError("tensor-truncated", f"{path}: header cut off before {rank} dims")
    dims = struct.unpack_from(f"<{rank}I", raw, 12)
    payload = raw[12 + 4 * rank:]
    expected = int(np.prod(dims, dtype=np.int64)) * 4
    if len(payload) != expected:
        raise FormatError(
            "tensor-length", f"{path}: payload holds {len(payload)} bytes, dims need {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


# ---------------------------------------------------------------- PGM maps

def write_pgm(path, values: np.ndarray) -> None:
    """Write values in [0, 1] as a binary P5 PGM (clamped, scaled to 0..255)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {arr.shape}")
    scaled = np.rint(255.0 * np.clip(arr, 0.0, 1.0)).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + scaled.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM written by write_pgm; returns uint8 (H, W)."""
    raw = _read_file(path, "pgm-io")
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise FormatError("pgm-format", f"{path}: not a maxval-255 P5 file")
    try:
        w, h = (int(v) for v in parts[1].split())
    except ValueError as exc:
        raise FormatError("pgm-format", f"{path}: bad size line {parts[1]!r}") from exc
    if len(parts[3]) != w * h:
        raise FormatError("pgm-format", f"{path}: payload holds {len(parts[3])} bytes, need {w * h}")
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w).copy()

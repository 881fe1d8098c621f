"""Pinhole camera model, ego<->image projection, and frustum point generation.

All 3D points live in the ego frame (x forward, y left, z up).  Extrinsics are
stored ego-to-camera, so a camera with rotation R and translation t maps an ego
point X to camera coordinates R @ X + t, and the full projection matrix is
P = K @ [R | t].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Depths at or below this are treated as behind the camera.
DEPTH_EPS = 1e-9
# Tolerance for the orthonormality check on rotation matrices.
ROTATION_TOL = 1e-9


def _as_matrix(value, shape, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class Camera:
    """One pinhole camera with intrinsics, ego-to-camera pose, and feature stride."""

    name: str
    width: int
    height: int
    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    feature_stride: int = 16

    def __post_init__(self):
        K = _as_matrix(self.intrinsics, (3, 3), "intrinsics")
        R = _as_matrix(self.rotation, (3, 3), "rotation")
        t = _as_matrix(self.translation, (3,), "translation")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"camera {self.name!r}: width and height must be >= 1")
        if self.feature_stride < 1:
            raise ValueError(f"camera {self.name!r}: feature_stride must be >= 1")
        if K[2, 0] != 0.0 or K[2, 1] != 0.0 or K[2, 2] != 1.0:
            raise ValueError(f"camera {self.name!r}: intrinsics bottom row must be [0, 0, 1]")
        if K[0, 0] <= 0.0 or K[1, 1] <= 0.0:
            raise ValueError(f"camera {self.name!r}: focal lengths must be positive")
        if not np.allclose(R.T @ R, np.eye(3), atol=ROTATION_TOL, rtol=0.0):
            raise ValueError(f"camera {self.name!r}: rotation is not orthonormal")
        for attr, arr in (("intrinsics", K), ("rotation", R), ("translation", t)):
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)

    @property
    def feature_width(self) -> int:
        return -(-self.width // self.feature_stride)

    @property
    def feature_height(self) -> int:
        return -(-self.height // self.feature_stride)

    @property
    def position(self) -> np.ndarray:
        """Camera center in ego coordinates (solves R @ X + t = 0)."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Rig:
    """An ordered multi-camera rig with unique camera names."""

    cameras: tuple[Camera, ...]

    def __post_init__(self):
        cams = tuple(self.cameras)
        if len(cams) < 1:
            raise ValueError("rig needs at least one camera")
        names = [c.name for c in cams]
        if len(set(names)) != len(names):
            raise ValueError(f"camera names must be unique, got {names}")
        object.__setattr__(self, "cameras", cams)

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)


@dataclass(frozen=True)
class ProjectionHit:
    """Result of projecting one ego point into one camera.

    u and v are still reported for positive-depth points that fall outside the
    image so callers can diagnose near misses; valid is the authoritative flag.
    """

    camera_index: int
    u: float
    v: float
    depth: float
    valid: bool


@dataclass(frozen=True)
class FrustumPoints:
    """Ego-frame 3D sample points for every (feature cell, depth bin) of a camera.

    points has shape (feature_height, feature_width, n_bins, 3) and C-order
    flattening yields row-major pixels, then ascending depth bins.
    """

    points: np.ndarray
    depths: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return self.points.shape[0] * self.points.shape[1] * self.points.shape[2]

    @property
    def flat(self) -> np.ndarray:
        return self.points.reshape(-1, 3)


def make_projection_matrix(camera: Camera) -> np.ndarray:
    """Return the 3x4 matrix P = K @ [R | t] mapping ego homogeneous points to d*(u, v, 1)."""
    Rt = np.hstack([camera.rotation, camera.translation[:, None]])
    return camera.intrinsics @ Rt


def project_points(camera: Camera, points: np.ndarray, camera_index: int = 0):
    """Project an (N, 3) array of ego points; returns (u, v, depth, valid) arrays.

    depth is the camera-frame z coordinate.  valid requires depth > DEPTH_EPS and
    (u, v) inside the half-open image box [0, width) x [0, height).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam_pts = pts @ camera.rotation.T + camera.translation
    depth = cam_pts[:, 2]
    img = cam_pts @ camera.intrinsics.T
    with np.errstate(divide="ignore", invalid="ignore"):
        u = img[:, 0] / depth
        v = img[:, 1] / depth
    behind = depth <= DEPTH_EPS
    u = np.where(behind, np.nan, u)
    v = np.where(behind, np.nan, v)
    valid = (~behind) & (u >= 0.0) & (u < camera.width) & (v >= 0.0) & (v < camera.height)
    return u, v, depth, valid


def project(camera: Camera, point, camera_index: int = 0) -> ProjectionHit:
    """Project a single ego point into the camera (see project_points)."""
    u, v, depth, valid = project_points(camera, np.asarray(point, dtype=np.float64)[None, :])
    return ProjectionHit(
        camera_index=camera_index,
        u=float(u[0]),
        v=float(v[0]),
        depth=float(depth[0]),
        valid=bool(valid[0]),
    )


def unproject_points(camera: Camera, u, v, depth) -> np.ndarray:
    """Map image coordinates plus depth back to (N, 3) ego points.

    Inverse of project_points on its valid domain: the ego point X satisfies
    R @ X + t = depth * K^-1 @ (u, v, 1).
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    d = np.asarray(depth, dtype=np.float64).ravel()
    u, v, d = np.broadcast_arrays(u, v, d)
    if np.any(d <= 0.0):
        raise ValueError("unproject requires positive depth")
    K_inv = np.linalg.inv(camera.intrinsics)
    pix = np.stack([u, v, np.ones_like(u)], axis=0)
    cam_pts = (K_inv @ pix) * d[None, :]
    return (cam_pts - camera.translation[:, None]).T @ camera.rotation


def unproject(camera: Camera, u: float, v: float, depth: float) -> np.ndarray:
    """Single-point version of unproject_points; returns an ego 3-vector."""
    return unproject_points(camera, [u], [v], [depth])[0]


def build_frustum(camera: Camera, bins) -> FrustumPoints:
    """Unproject every feature-map cell center through every depth bin center.

    Cell (i, j) samples the image at ((i + 0.5) * stride, (j + 0.5) * stride);
    depth samples are the bin centers of `bins` (a DepthBins).
    """
    stride = camera.feature_stride
    w_f, h_f = camera.feature_width, camera.feature_height
    us = (np.arange(w_f, dtype=np.float64) + 0.5) * stride
    vs = (np.arange(h_f, dtype=np.float64) + 0.5) * stride
    depths = bins.centers()
    uu, vv = np.meshgrid(us, vs, indexing="xy")
    K_inv = np.linalg.inv(camera.intrinsics)
    pix = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=0)
    rays = K_inv @ pix                                    # (3, h_f*w_f), z component 1
    cam_pts = rays[:, :, None] * depths[None, None, :]    # (3, pixels, bins)
    ego = np.einsum("ij,jpd->pdi", camera.rotation.T, cam_pts - camera.translation[:, None, None])
    return FrustumPoints(points=ego.reshape(h_f, w_f, depths.size, 3), depths=depths)

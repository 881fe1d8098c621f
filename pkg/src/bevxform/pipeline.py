"""End-to-end orchestration over synthetic scenes: oracle depth/feature
rendering by ray casting, forward projection, foreground proposal, backward
refinement, temporal BEV stacking, and the composite detection score.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backward import DeformableParams, HeightSampling, refine
from .depth import DepthBins, oracle_dist_map
from .foreground import (
    Box3D,
    BevQuery,
    ForegroundMask,
    MaskHeadWeights,
    mask_from_binary,
    mask_head,
    rasterize_gt_mask,
    select_queries,
)
from .forward import BevGrid, BevSpec, SparsityReport, forward_project, occupancy_stats
from .geometry import Camera, Rig
from .sampling import bilinear


@dataclass(frozen=True)
class Scene:
    """Synthetic world: a rig, oriented boxes with feature vectors, and a ground plane.

    box_features has one row per box; channels is its width.  Scenes built via
    Scene.random are fully determined by their seed.
    """

    rig: Rig
    boxes: tuple[Box3D, ...]
    box_features: np.ndarray
    ground_z: float = 0.0
    seed: int = 0
    depth_sigma: float = 2.0

    def __post_init__(self):
        boxes = tuple(self.boxes)
        feats = np.asarray(self.box_features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != len(boxes):
            raise ValueError(
                f"box_features must be (n_boxes, C) with n_boxes={len(boxes)}, got {feats.shape}"
            )
        if self.depth_sigma < 0.0:
            raise ValueError("depth_sigma must be >= 0")
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "box_features", feats)

    @property
    def channels(self) -> int:
        return self.box_features.shape[1]

    @classmethod
    def random(
        cls,
        rig: Rig,
        seed: int,
        n_boxes: int = 4,
        channels: int = 8,
        ground_z: float = 0.0,
        depth_sigma: float = 2.0,
    ) -> "Scene":
        """Deterministic scene: boxes scattered 8-40 m out with unit-scale features."""
        rng = np.random.default_rng(seed)
        boxes = []
        for _ in range(n_boxes):
            radius = rng.uniform(8.0, 40.0)
            angle = rng.uniform(0.0, 2.0 * np.pi)
            size = rng.uniform([2.0, 1.5, 1.2], [8.0, 3.0, 3.5])
            boxes.append(
                Box3D(
                    center=np.array(
                        [radius * np.cos(angle), radius * np.sin(angle), ground_z + size[2] / 2.0]
                    ),
                    size=size,
                    yaw=rng.uniform(-np.pi, np.pi),
                )
            )
        feats = rng.uniform(0.5, 1.5, (n_boxes, channels))
        return cls(
            rig=rig,
            boxes=tuple(boxes),
            box_features=feats,
            ground_z=ground_z,
            seed=seed,
            depth_sigma=depth_sigma,
        )


@dataclass(frozen=True)
class EgoPose:
    """Ego-to-global pose; only the planar part (x, y, yaw) is used for warping."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be (3, 3) and translation (3,)")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0.0):
            raise ValueError("rotation is not orthonormal")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def yaw(self) -> float:
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    @classmethod
    def planar(cls, x: float, y: float, yaw: float) -> "EgoPose":
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(rotation=R, translation=np.array([x, y, 0.0]))


@dataclass(frozen=True)
class TruePositiveErrors:
    """The five matched-detection error terms entering the composite score."""

    translation: float
    scale: float
    orientation: float
    velocity: float
    attribute: float

    def __post_init__(self):
        for name in ("translation", "scale", "orientation", "velocity", "attribute"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} error must be >= 0")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.translation, self.scale, self.orientation, self.velocity, self.attribute)


@dataclass
class PipelineResult:
    """Artifacts of one end-to-end run."""

    bev: BevGrid
    mask: ForegroundMask
    queries: list[BevQuery]
    refined: BevGrid
    sparsity: SparsityReport


def _ray_grid(camera: Camera):
    """Pixel-center rays for every feature cell: origin plus (3, H_f*W_f) ego directions.

    Directions are scaled so the ray parameter equals camera-frame depth.
    """
    stride = camera.feature_stride
    us = (np.arange(camera.feature_width, dtype=np.float64) + 0.5) * stride
    vs = (np.arange(camera.feature_height, dtype=np.float64) + 0.5) * stride
    uu, vv = np.meshgrid(us, vs, indexing="xy")
    pix = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=0)
    dirs_cam = np.linalg.inv(camera.intrinsics) @ pix       # third component stays 1
    dirs_ego = camera.rotation.T @ dirs_cam
    origin = camera.position
    return origin, dirs_ego


def _slab_interval(o: float, d: np.ndarray, half: float):
    """Entry/exit ray parameters against |coordinate| <= half, robust to d = 0."""
    with np.errstate(divide="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    parallel = d == 0.0
    inside = abs(o) <= half
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
    return lo, hi


def raycast(scene: Scene, camera: Camera):
    """Cast one ray per feature cell; returns (depth map, hit object index map).

    Depth is the camera-frame z of the nearest surface (ground plane or box
    face), +inf when nothing is hit.  Object index is the box index, or -1 for
    ground and sky.  A camera inside a box sees that box's far face.
    """
    origin, dirs = _ray_grid(camera)
    n = dirs.shape[1]
    best_t = np.full(n, np.inf)
    best_obj = np.full(n, -1, dtype=np.int64)

    dz = dirs[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = (scene.ground_z - origin[2]) / dz
    hit_g = np.isfinite(t_ground) & (t_ground > 1e-9)
    best_t = np.where(hit_g, t_ground, best_t)

    for bi, box in enumerate(scene.boxes):
        c, s = np.cos(box.yaw), np.sin(box.yaw)
        # Box-local frame: rotate by -yaw around the box center.
        ox = origin[0] - box.center[0]
        oy = origin[1] - box.center[1]
        oz = origin[2] - box.center[2]
        o_local = np.array([c * ox + s * oy, -s * ox + c * oy, oz])
        d_local = np.stack(
            [c * dirs[0] + s * dirs[1], -s * dirs[0] + c * dirs[1], dirs[2]], axis=0
        )
        t_near = np.full(n, -np.inf)
        t_far = np.full(n, np.inf)
        for axis in range(3):
            lo, hi = _slab_interval(o_local[axis], d_local[axis], box.size[axis] / 2.0)
            t_near = np.maximum(t_near, lo)
            t_far = np.minimum(t_far, hi)
        t_hit = np.where(t_near > 1e-9, t_near, t_far)
        hit = (t_near <= t_far) & (t_hit > 1e-9)
        closer = hit & (t_hit < best_t)
        best_t = np.where(closer, t_hit, best_t)
        best_obj = np.where(closer, bi, best_obj)

    shape = (camera.feature_height, camera.feature_width)
    return best_t.reshape(shape), best_obj.reshape(shape)


def render_depth(scene: Scene, camera: Camera) -> np.ndarray:
    """Oracle depth map at feature resolution; +inf where a ray escapes the scene."""
    depth, _ = raycast(scene, camera)
    return depth


def render_features(scene: Scene, camera: Camera) -> np.ndarray:
    """Oracle feature map: each cell carries the first-hit box's feature vector.

    Ground and sky cells are zero.
    """
    _, obj = raycast(scene, camera)
    feats = np.zeros((obj.shape[0], obj.shape[1], scene.channels), dtype=np.float64)
    hit = obj >= 0
    feats[hit] = scene.box_features[obj[hit]]
    return feats


def run_pipeline(
    scene: Scene,
    spec: BevSpec,
    bins: DepthBins = DepthBins(),
    params: DeformableParams | None = None,
    mask_weights: MaskHeadWeights | None = None,
    t_f: float = 0.4,
    hs: HeightSampling = HeightSampling(),
    workers: int = 1,
) -> PipelineResult:
    """Full forward -> foreground -> backward pass over a synthetic scene.

    Depth distributions come from the scene's ray-cast oracle (spread by
    scene.depth_sigma); the foreground mask comes from mask_weights, or from
    the ground-truth box footprints when no weights are given.  Deterministic
    for a fixed scene and configuration.
    """
    if spec.channels != scene.channels:
        raise ValueError(f"spec has {spec.channels} channels, scene has {scene.channels}")
    if params is None:
        params = DeformableParams.identity(scene.channels)
    feats = [render_features(scene, cam) for cam in scene.rig]
    dist_maps = [
        oracle_dist_map(render_depth(scene, cam), bins, sigma=scene.depth_sigma)
        for cam in scene.rig
    ]
    bev = forward_project(scene.rig, feats, dist_maps, spec, workers=workers)
    if mask_weights is not None:
        mask = mask_head(bev, mask_weights)
    else:
        mask = mask_from_binary(rasterize_gt_mask(list(scene.boxes), spec))
    queries = select_queries(bev, mask, t_f=t_f)
    refined = refine(bev, queries, scene.rig, feats, dist_maps, params, hs=hs)
    return PipelineResult(
        bev=bev,
        mask=mask,
        queries=queries,
        refined=refined,
        sparsity=occupancy_stats(bev),
    )


def warp_and_stack(
    prev: BevGrid, cur: BevGrid, pose_prev: EgoPose, pose_cur: EgoPose
) -> BevGrid:
    """Resample the previous BEV into the current frame and concatenate channels.

    Only the planar pose part (x, y, yaw) is used: each current cell center is
    mapped through the current pose into the world, then into the previous ego
    frame, and bilinearly sampled there (zero outside the extent).  The result
    holds 2C channels: warped-previous first, current second.
    """
    if prev.spec != cur.spec:
        raise ValueError("grids must share one BevSpec")
    spec = cur.spec
    xs = spec.x_min + (np.arange(spec.grid_w) + 0.5) * spec.cell_w
    ys = spec.y_min + (np.arange(spec.grid_h) + 0.5) * spec.cell_h
    xx, yy = np.meshgrid(xs, ys, indexing="xy")

    cos_c, sin_c = np.cos(pose_cur.yaw), np.sin(pose_cur.yaw)
    gx = cos_c * xx - sin_c * yy + pose_cur.translation[0]
    gy = sin_c * xx + cos_c * yy + pose_cur.translation[1]
    cos_p, sin_p = np.cos(pose_prev.yaw), np.sin(pose_prev.yaw)
    dx = gx - pose_prev.translation[0]
    dy = gy - pose_prev.translation[1]
    prev_x = cos_p * dx + sin_p * dy
    prev_y = -sin_p * dx + cos_p * dy

    fx = (prev_x - spec.x_min) / spec.cell_w
    fy = (prev_y - spec.y_min) / spec.cell_h
    warped = bilinear(prev.features, fx.ravel(), fy.ravel(), mode="zeros")
    warped = warped.reshape(spec.grid_h, spec.grid_w, spec.channels)

    stacked_spec = BevSpec(
        spec.x_min, spec.x_max, spec.y_min, spec.y_max,
        spec.grid_h, spec.grid_w, 2 * spec.channels,
    )
    features = np.concatenate([warped, cur.features], axis=2)
    occupied = cur.occupied | np.any(warped != 0.0, axis=2)
    return BevGrid(spec=stacked_spec, features=features, occupied=occupied)


def nds(mean_ap: float, errors: TruePositiveErrors) -> float:
    """Composite detection score: 0.1 * (5 * mAP + sum of (1 - min(1, error)))."""
    if not 0.0 <= mean_ap <= 1.0:
        raise ValueError("mean_ap must be in [0, 1]")
    recalls = sum(1.0 - min(1.0, e) for e in errors.as_tuple())
    return 0.1 * (5.0 * mean_ap + recalls)

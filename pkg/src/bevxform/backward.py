"""Depth-aware backward projection: lift BEV query cells to height reference
points, project them into every camera, sample image features with deformable
attention, weight samples by depth consistency, and fuse the result back into
the BEV grid as a residual.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depth import DepthDistMap, consistency, sample_distribution
from .forward import BevGrid, BevSpec
from .foreground import BevQuery
from .geometry import ProjectionHit, Rig, project
from .sampling import bilinear


@dataclass(frozen=True)
class HeightSampling:
    """Uniform, endpoint-inclusive height samples for query lifting."""

    z_min: float = -5.0
    z_max: float = 3.0
    n_ref: int = 4

    def __post_init__(self):
        if self.n_ref < 1:
            raise ValueError("n_ref must be >= 1")
        if self.z_min > self.z_max:
            raise ValueError("z_min must not exceed z_max")

    def heights(self) -> np.ndarray:
        if self.n_ref == 1:
            return np.array([(self.z_min + self.z_max) / 2.0])
        return np.linspace(self.z_min, self.z_max, self.n_ref)


@dataclass(frozen=True)
class RefHit:
    """Projection of one (reference point, camera) pair plus its depth consistency."""

    ref_index: int
    camera_index: int
    hit: ProjectionHit
    consistency: float


@dataclass(frozen=True)
class DeformableParams:
    """Linear maps driving deformable attention sampling.

    For query dimension C: offset_w (heads * points * 2, C) with offset_b,
    weight_w (heads * points, C) with weight_b, value_w / output_w (C, C) with
    biases.  The value projection output is split into `heads` equal slices,
    so C must be divisible by heads.
    """

    heads: int
    points_per_head: int
    offset_w: np.ndarray
    offset_b: np.ndarray
    weight_w: np.ndarray
    weight_b: np.ndarray
    value_w: np.ndarray
    value_b: np.ndarray
    output_w: np.ndarray
    output_b: np.ndarray

    def __post_init__(self):
        h, p = self.heads, self.points_per_head
        if h < 1 or p < 1:
            raise ValueError("heads and points_per_head must be >= 1")
        c = self.value_w.shape[0]
        if c % h != 0:
            raise ValueError(f"channels {c} not divisible by {h} heads")
        expected = {
            "offset_w": (h * p * 2, c),
            "offset_b": (h * p * 2,),
            "weight_w": (h * p, c),
            "weight_b": (h * p,),
            "value_w": (c, c),
            "value_b": (c,),
            "output_w": (c, c),
            "output_b": (c,),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)

    @property
    def channels(self) -> int:
        return self.value_w.shape[0]

    @classmethod
    def identity(cls, channels: int) -> "DeformableParams":
        """One head, one point, zero offsets, identity value/output maps.

        With these parameters deformable_sample reduces to plain bilinear
        sampling at the projection point.
        """
        return cls(
            heads=1,
            points_per_head=1,
            offset_w=np.zeros((2, channels)),
            offset_b=np.zeros(2),
            weight_w=np.zeros((1, channels)),
            weight_b=np.zeros(1),
            value_w=np.eye(channels),
            value_b=np.zeros(channels),
            output_w=np.eye(channels),
            output_b=np.zeros(channels),
        )

    @classmethod
    def random(
        cls, rng: np.random.Generator, channels: int, heads: int = 8, points_per_head: int = 4
    ) -> "DeformableParams":
        """Small random maps for property tests; offsets stay within a few cells."""
        return cls(
            heads=heads,
            points_per_head=points_per_head,
            offset_w=rng.normal(0.0, 0.5, (heads * points_per_head * 2, channels)),
            offset_b=rng.normal(0.0, 0.5, heads * points_per_head * 2),
            weight_w=rng.normal(0.0, 0.5, (heads * points_per_head, channels)),
            weight_b=rng.normal(0.0, 0.5, heads * points_per_head),
            value_w=rng.normal(0.0, 0.5, (channels, channels)),
            value_b=rng.normal(0.0, 0.1, channels),
            output_w=rng.normal(0.0, 0.5, (channels, channels)),
            output_b=rng.normal(0.0, 0.1, channels),
        )


def reference_points(query_cell: tuple[int, int], spec: BevSpec, hs: HeightSampling) -> np.ndarray:
    """Lift a BEV cell to (n_ref, 3) ego points at its metric center and sampled heights."""
    x, y = query_cell
    if not (0 <= x < spec.grid_w and 0 <= y < spec.grid_h):
        raise ValueError(f"cell ({x}, {y}) outside {spec.grid_w}x{spec.grid_h} grid")
    cx, cy = spec.cell_center(x, y)
    zs = hs.heights()
    out = np.empty((zs.size, 3), dtype=np.float64)
    out[:, 0] = cx
    out[:, 1] = cy
    out[:, 2] = zs
    return out


def project_refs(points: np.ndarray, rig: Rig, dist_maps: list[DepthDistMap]) -> list[RefHit]:
    """Project reference points into every camera and score depth consistency.

    Emits one RefHit per (camera, ref) pair in camera-major order.  Invalid
    projections carry consistency 0; valid ones score the camera's sampled
    depth distribution against the projected depth.
    """
    if len(dist_maps) != len(rig):
        raise ValueError("need one dist map per camera")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    hits = []
    for i, (cam, dmap) in enumerate(zip(rig, dist_maps)):
        for j in range(points.shape[0]):
            hit = project(cam, points[j], camera_index=i)
            if hit.valid:
                dist = sample_distribution(
                    dmap, hit.u / cam.feature_stride, hit.v / cam.feature_stride
                )
                w_c = consistency(dist, hit.depth, dmap.bins)
            else:
                w_c = 0.0
            hits.append(RefHit(ref_index=j, camera_index=i, hit=hit, consistency=w_c))
    return hits


def deformable_sample(
    query: np.ndarray, feat: np.ndarray, p: tuple[float, float], params: DeformableParams
) -> np.ndarray:
    """Deformable attention read of one feature map at projection point p.

    The query predicts per-(head, point) offsets in feature-map cells and
    attention logits; samples are value-projected, weighted by per-head
    softmax, and mixed by the output projection.  Sampling clamps to the edge.
    """
    query = np.asarray(query, dtype=np.float64)
    c = params.channels
    if query.shape != (c,):
        raise ValueError(f"query must have shape ({c},), got {query.shape}")
    if feat.shape[2] != c:
        raise ValueError(f"feature map has {feat.shape[2]} channels, params want {c}")
    h, pp = params.heads, params.points_per_head
    offsets = (params.offset_w @ query + params.offset_b).reshape(h, pp, 2)
    logits = (params.weight_w @ query + params.weight_b).reshape(h, pp)
    # Per-head softmax over sampling points.
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    attn = shifted / shifted.sum(axis=1, keepdims=True)
    head_dim = c // h
    mixed = np.empty(c, dtype=np.float64)
    for hi in range(h):
        acc = np.zeros(head_dim, dtype=np.float64)
        for pi in range(pp):
            sample = bilinear(feat, p[0] + offsets[hi, pi, 0], p[1] + offsets[hi, pi, 1], mode="edge")
            value = params.value_w @ sample + params.value_b
            acc += attn[hi, pi] * value[hi * head_dim:(hi + 1) * head_dim]
        mixed[hi * head_dim:(hi + 1) * head_dim] = acc
    return params.output_w @ mixed + params.output_b


def spatial_cross_attention(
    query: np.ndarray,
    feats: list[np.ndarray],
    hits: list[RefHit],
    params: DeformableParams,
    rig: Rig,
    normalize: bool = True,
) -> np.ndarray:
    """Sum deformable samples over all valid (camera, ref) hits.

    With normalize=True (default) the sum is divided by max(1, valid hit
    count), so a lone hit passes through unscaled and no hits yield zero.
    """
    total = np.zeros(params.channels, dtype=np.float64)
    n_valid = 0
    for h in hits:
        if not h.hit.valid:
            continue
        cam = rig.cameras[h.camera_index]
        p = (h.hit.u / cam.feature_stride, h.hit.v / cam.feature_stride)
        total += deformable_sample(query, feats[h.camera_index], p, params)
        n_valid += 1
    if normalize:
        total /= max(1, n_valid)
    return total


def depth_aware_cross_attention(
    query: np.ndarray,
    feats: list[np.ndarray],
    hits: list[RefHit],
    params: DeformableParams,
    rig: Rig,
    normalize: bool = True,
) -> np.ndarray:
    """spatial_cross_attention with each hit's sample scaled by its depth consistency."""
    total = np.zeros(params.channels, dtype=np.float64)
    n_valid = 0
    for h in hits:
        if not h.hit.valid:
            continue
        cam = rig.cameras[h.camera_index]
        p = (h.hit.u / cam.feature_stride, h.hit.v / cam.feature_stride)
        total += h.consistency * deformable_sample(query, feats[h.camera_index], p, params)
        n_valid += 1
    if normalize:
        total /= max(1, n_valid)
    return total


def refine(
    grid: BevGrid,
    queries: list[BevQuery],
    rig: Rig,
    feats: list[np.ndarray],
    dist_maps: list[DepthDistMap],
    params: DeformableParams,
    hs: HeightSampling = HeightSampling(),
    normalize: bool = True,
) -> BevGrid:
    """Single backward pass: add a depth-aware attention residual to each query cell.

    Non-query cells are copied bit-for-bit.  A refined cell becomes occupied
    when its residual is nonzero, so blank foreground cells can be filled in.
    """
    out = grid.copy()
    for q in queries:
        pts = reference_points((q.x, q.y), grid.spec, hs)
        hits = project_refs(pts, rig, dist_maps)
        update = depth_aware_cross_attention(q.feature, feats, hits, params, rig, normalize=normalize)
        out.features[q.y, q.x] += update
        if np.any(update != 0.0):
            out.occupied[q.y, q.x] = True
    return out

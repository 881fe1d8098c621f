"""Forward projection: lift image features onto frustum points by depth weight,
then splat into a BEV grid by sum pooling.

Two splat kernels are provided.  splat_naive is the reference: a single
unbuffered scatter-add whose per-cell accumulation order is the input order.
splat_pooled stable-sorts points by cell and reduces each cell's run
sequentially in input order, so its output is bit-identical to the naive kernel
for any worker count; only the independent per-cell reductions parallelize.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .depth import DepthDistMap
from .geometry import FrustumPoints, Rig, build_frustum


@dataclass(frozen=True)
class BevSpec:
    """Metric extent and resolution of a BEV grid (rows span y, columns span x)."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    grid_h: int
    grid_w: int
    channels: int

    def __post_init__(self):
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("extent must have positive size")
        if self.grid_h < 1 or self.grid_w < 1 or self.channels < 1:
            raise ValueError("grid_h, grid_w, channels must be >= 1")

    @classmethod
    def square(cls, half_extent: float, size: int, channels: int) -> "BevSpec":
        return cls(-half_extent, half_extent, -half_extent, half_extent, size, size, channels)

    @property
    def cell_w(self) -> float:
        return (self.x_max - self.x_min) / self.grid_w

    @property
    def cell_h(self) -> float:
        return (self.y_max - self.y_min) / self.grid_h

    def cell_center(self, x: int, y: int) -> tuple[float, float]:
        """Metric center of cell (column x, row y)."""
        return (
            self.x_min + (x + 0.5) * self.cell_w,
            self.y_min + (y + 0.5) * self.cell_h,
        )

    def cell_indices(self, positions: np.ndarray):
        """Half-open binning of (N, 3) or (N, 2) points; returns (ix, iy, inside)."""
        pos = np.asarray(positions, dtype=np.float64)
        ix = np.floor((pos[:, 0] - self.x_min) / self.cell_w).astype(np.int64)
        iy = np.floor((pos[:, 1] - self.y_min) / self.cell_h).astype(np.int64)
        inside = (ix >= 0) & (ix < self.grid_w) & (iy >= 0) & (iy < self.grid_h)
        return ix, iy, inside


@dataclass
class BevGrid:
    """BEV features (grid_h, grid_w, channels) plus per-cell occupancy flags."""

    spec: BevSpec
    features: np.ndarray
    occupied: np.ndarray

    @classmethod
    def zeros(cls, spec: BevSpec) -> "BevGrid":
        return cls(
            spec=spec,
            features=np.zeros((spec.grid_h, spec.grid_w, spec.channels), dtype=np.float64),
            occupied=np.zeros((spec.grid_h, spec.grid_w), dtype=bool),
        )

    def copy(self) -> "BevGrid":
        return BevGrid(spec=self.spec, features=self.features.copy(), occupied=self.occupied.copy())


@dataclass(frozen=True)
class LiftedPoints:
    """Columnar store of lifted points: positions (N, 3), features (N, C), weights (N,)."""

    positions: np.ndarray
    features: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        feat = np.ascontiguousarray(self.features, dtype=np.float64)
        wgt = np.ascontiguousarray(self.weights, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        if feat.ndim != 2 or feat.shape[0] != pos.shape[0]:
            raise ValueError(f"features must be (N, C), got {feat.shape}")
        if wgt.shape != (pos.shape[0],):
            raise ValueError(f"weights must be (N,), got {wgt.shape}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feat)
        object.__setattr__(self, "weights", wgt)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @staticmethod
    def concat(parts: list["LiftedPoints"]) -> "LiftedPoints":
        if not parts:
            raise ValueError("need at least one part")
        return LiftedPoints(
            positions=np.concatenate([p.positions for p in parts]),
            features=np.concatenate([p.features for p in parts]),
            weights=np.concatenate([p.weights for p in parts]),
        )


@dataclass(frozen=True)
class SparsityReport:
    """Occupancy statistics of one BEV grid."""

    total_cells: int
    occupied_cells: int
    occupancy_rate: float
    blank_rate: float
    per_camera_hits: tuple[int, ...] = field(default=())


def lift(
    features: np.ndarray,
    dist_map: DepthDistMap,
    frustum: FrustumPoints,
    weight_floor: float = 0.0,
) -> LiftedPoints:
    """Expand (H_f, W_f, C) features into one weighted 3D point per (pixel, bin).

    Every point carries its pixel's feature vector and the pixel's weight for
    that depth bin.  Points with weight below weight_floor are dropped; the
    default floor of 0 keeps everything, including zero-weight points.
    """
    features = np.asarray(features, dtype=np.float64)
    h, w, d, _ = frustum.points.shape
    if features.shape[:2] != (h, w):
        raise ValueError(f"features shape {features.shape[:2]} != frustum cells {(h, w)}")
    if dist_map.grid.shape != (h, w, d):
        raise ValueError(f"dist map shape {dist_map.grid.shape} != frustum {(h, w, d)}")
    c = features.shape[2]
    positions = frustum.points.reshape(-1, 3)
    weights = dist_map.grid.reshape(-1)
    feats = np.repeat(features.reshape(-1, c), d, axis=0)
    if weight_floor > 0.0:
        keep = weights >= weight_floor
        return LiftedPoints(positions[keep], feats[keep], weights[keep])
    return LiftedPoints(positions, feats, weights)


def _flat_cells(points: LiftedPoints, spec: BevSpec):
    ix, iy, inside = spec.cell_indices(points.positions)
    cells = (iy * spec.grid_w + ix)[inside]
    return cells, inside


def _occupied_from(cells: np.ndarray, weights: np.ndarray, spec: BevSpec) -> np.ndarray:
    hits = np.bincount(cells[weights > 0.0], minlength=spec.grid_h * spec.grid_w)
    return (hits > 0).reshape(spec.grid_h, spec.grid_w)


def splat_naive(points: LiftedPoints, spec: BevSpec) -> BevGrid:
    """Reference sum pooling: unbuffered scatter-add in input order.

    Cell binning is half-open, so points exactly on the x_max or y_max boundary
    fall outside.  A cell is occupied iff some in-extent point with weight > 0
    landed in it.
    """
    if points.features.shape[1] != spec.channels:
        raise ValueError(
            f"points carry {points.features.shape[1]} channels, spec wants {spec.channels}"
        )
    grid = BevGrid.zeros(spec)
    if len(points) == 0:
        return grid
    cells, inside = _flat_cells(points, spec)
    src = points.weights[inside, None] * points.features[inside]
    flat = grid.features.reshape(-1, spec.channels)
    np.add.at(flat, cells, src)
    grid.occupied = _occupied_from(cells, points.weights[inside], spec)
    return grid


@njit(cache=True)
def _counting_sort(cells, n_cells):
    """Stable counting sort; returns (permutation, segment start offsets)."""
    counts = np.zeros(n_cells + 1, dtype=np.int64)
    for i in range(cells.shape[0]):
        counts[cells[i] + 1] += 1
    for c in range(1, n_cells + 1):
        counts[c] += counts[c - 1]
    starts = counts.copy()
    slot = counts[:-1].copy()
    perm = np.empty(cells.shape[0], dtype=np.int64)
    for i in range(cells.shape[0]):
        c = cells[i]
        perm[slot[c]] = i
        slot[c] += 1
    return perm, starts


@njit(cache=True, nogil=True)
def _reduce_cells(src, perm, starts, lo, hi, out):
    """Sum each cell's points strictly in input order (perm is stable)."""
    for cell in range(lo, hi):
        for k in range(starts[cell], starts[cell + 1]):
            i = perm[k]
            for ch in range(src.shape[1]):
                out[cell, ch] += src[i, ch]


def splat_pooled(points: LiftedPoints, spec: BevSpec, workers: int = 1) -> BevGrid:
    """Optimized sum pooling, bit-identical to splat_naive for any worker count.

    Points are stable-sorted by cell index; each cell's run is then reduced
    sequentially in input order, which reproduces the naive kernel's exact
    floating-point operation sequence.  Distinct cells touch disjoint output
    rows, so cell ranges can be reduced concurrently without changing results.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if points.features.shape[1] != spec.channels:
        raise ValueError(
            f"points carry {points.features.shape[1]} channels, spec wants {spec.channels}"
        )
    grid = BevGrid.zeros(spec)
    if len(points) == 0:
        return grid
    cells, inside = _flat_cells(points, spec)
    src = points.weights[inside, None] * points.features[inside]
    n_cells = spec.grid_h * spec.grid_w
    perm, starts = _counting_sort(cells, n_cells)
    flat = grid.features.reshape(-1, spec.channels)
    if workers == 1:
        _reduce_cells(src, perm, starts, 0, n_cells, flat)
    else:
        bounds = np.linspace(0, n_cells, workers + 1).astype(np.int64)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_reduce_cells, src, perm, starts, int(bounds[k]), int(bounds[k + 1]), flat)
                for k in range(workers)
            ]
            for f in futures:
                f.result()
    grid.occupied = _occupied_from(cells, points.weights[inside], spec)
    return grid


def forward_project(
    rig: Rig,
    features: list[np.ndarray],
    dist_maps: list[DepthDistMap],
    spec: BevSpec,
    weight_floor: float = 0.0,
    workers: int = 1,
) -> BevGrid:
    """Lift every camera's features and splat the union into one BEV grid.

    features and dist_maps are per-camera lists aligned with rig order.
    Deterministic: the lifted point order is camera order, then row-major
    pixels, then ascending depth bins.
    """
    if len(features) != len(rig) or len(dist_maps) != len(rig):
        raise ValueError("need one feature map and one dist map per camera")
    parts = []
    for cam, feat, dmap in zip(rig, features, dist_maps):
        frustum = build_frustum(cam, dmap.bins)
        parts.append(lift(feat, dmap, frustum, weight_floor=weight_floor))
    return splat_pooled(LiftedPoints.concat(parts), spec, workers=workers)


def camera_hit_counts(rig: Rig, parts: list[LiftedPoints], spec: BevSpec) -> tuple[int, ...]:
    """Count each camera's lifted points that land inside the extent with weight > 0."""
    if len(parts) != len(rig):
        raise ValueError("need one LiftedPoints per camera")
    counts = []
    for p in parts:
        _, inside = _flat_cells(p, spec)
        counts.append(int(np.count_nonzero(inside & (p.weights > 0.0))))
    return tuple(counts)


def occupancy_stats(grid: BevGrid, per_camera_hits: tuple[int, ...] = ()) -> SparsityReport:
    """Summarize a grid's occupancy; blank_rate is 1 - occupancy_rate."""
    total = grid.occupied.size
    occ = int(np.count_nonzero(grid.occupied))
    rate = occ / total
    return SparsityReport(
        total_cells=total,
        occupied_cells=occ,
        occupancy_rate=rate,
        blank_rate=1.0 - rate,
        per_camera_hits=tuple(per_camera_hits),
    )

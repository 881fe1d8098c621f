"""Depth discretization, categorical depth distributions, and consistency scoring.

Depths are discretized onto bin centers d0 + k*delta for k in [0, count).  A
continuous depth is represented by two-hot weights on its enclosing bins, and
the consistency between a predicted distribution and a projected depth is the
dot product of the two, which reduces to a two-term sum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampling import bilinear


@dataclass(frozen=True)
class DepthBins:
    """Uniform depth discretization: bin k is centered at d0 + k*delta."""

    d0: float = 1.0
    delta: float = 0.5
    count: int = 118

    def __post_init__(self):
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")
        if self.count < 2:
            raise ValueError("count must be >= 2")

    @property
    def max_depth(self) -> float:
        return self.d0 + (self.count - 1) * self.delta

    def centers(self) -> np.ndarray:
        return self.d0 + self.delta * np.arange(self.count, dtype=np.float64)

    def in_range(self, d: float) -> bool:
        return bool(self.d0 <= d <= self.max_depth)


@dataclass(frozen=True)
class DepthDistMap:
    """Per-feature-cell categorical depth distributions, shape (H_f, W_f, count)."""

    bins: DepthBins
    grid: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 3 or grid.shape[2] != self.bins.count:
            raise ValueError(
                f"grid must be (H_f, W_f, {self.bins.count}), got shape {grid.shape}"
            )
        object.__setattr__(self, "grid", grid)


def validate_distribution(weights: np.ndarray, count: int) -> None:
    """Reject vectors that are not sub-distributions over `count` bins.

    Totals below 1 are allowed: the missing mass encodes out-of-range depth
    probability.  The all-zero vector is a fully out-of-range depth, and
    interpolating between an in-range cell and an out-of-range one sheds mass
    proportionally.
    """
    w = np.asarray(weights)
    if w.shape != (count,):
        raise ValueError(f"distribution must have shape ({count},), got {w.shape}")
    if np.any(w < 0.0):
        raise ValueError("distribution weights must be non-negative")
    total = float(w.sum())
    if total > 1.0 + 1e-6:
        raise ValueError(f"distribution weights must sum to at most 1, got {total}")


def two_hot(d: float, bins: DepthBins) -> np.ndarray:
    """Encode a continuous depth as linear weights on its two enclosing bins.

    An exact bin center yields a one-hot vector.  Depths outside
    [d0, d0 + (count-1)*delta] return the all-zero vector, which drives every
    consistency score to 0; bins.in_range(d) distinguishes that case.
    """
    w = np.zeros(bins.count, dtype=np.float64)
    if not np.isfinite(d) or not bins.in_range(d):
        return w
    pos = (d - bins.d0) / bins.delta
    i = min(int(np.floor(pos)), bins.count - 1)
    frac = pos - i
    w[i] = 1.0 - frac
    if frac > 0.0 and i + 1 < bins.count:
        w[i + 1] = frac
    return w


def consistency(dist: np.ndarray, d: float, bins: DepthBins) -> float:
    """Dot product of a depth distribution with the two-hot encoding of d.

    Equals dist[i] * w_i + dist[i+1] * w_{i+1} for the bins enclosing d, and 0
    for out-of-range d.  Always lands in [0, 1] for valid distributions.
    """
    dist = np.asarray(dist, dtype=np.float64)
    validate_distribution(dist, bins.count)
    return float(dist @ two_hot(d, bins))


def sample_distribution(dist_map: DepthDistMap, u: float, v: float) -> np.ndarray:
    """Bilinearly interpolate the distribution at feature-map coords (u, v).

    Coordinates are feature-map units (image pixels / feature_stride); cell
    (j, i) is centered at (i + 0.5, j + 0.5).  Out-of-bounds coordinates clamp
    to the edge cells so the result stays a convex combination of real cells.
    """
    return bilinear(dist_map.grid, u, v, mode="edge")


def consistency_on_map(dist_map: DepthDistMap, u, v, depth) -> np.ndarray:
    """Vectorized consistency of sampled distributions against depths.

    Equivalent to consistency(sample_distribution(m, u_k, v_k), d_k) for each k,
    but gathers only the two relevant bins instead of interpolating all of them.
    """
    bins = dist_map.bins
    us = np.atleast_1d(np.asarray(u, dtype=np.float64)).ravel()
    vs = np.atleast_1d(np.asarray(v, dtype=np.float64)).ravel()
    ds = np.atleast_1d(np.asarray(depth, dtype=np.float64)).ravel()
    if not (us.shape == vs.shape == ds.shape):
        raise ValueError("u, v, depth must have matching shapes")

    in_range = np.isfinite(ds) & (ds >= bins.d0) & (ds <= bins.max_depth)
    pos = np.where(in_range, (ds - bins.d0) / bins.delta, 0.0)
    i0 = np.minimum(np.floor(pos).astype(np.int64), bins.count - 1)
    frac = pos - i0
    i1 = np.minimum(i0 + 1, bins.count - 1)

    h, w, n = dist_map.grid.shape
    xs = np.clip(us, 0.5, w - 0.5) - 0.5
    ys = np.clip(vs, 0.5, h - 0.5) - 0.5
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    flat = dist_map.grid.reshape(h * w, n)
    lo = np.zeros(us.size, dtype=np.float64)
    hi = np.zeros(us.size, dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = np.clip(x0 + dx, 0, w - 1)
            yi = np.clip(y0 + dy, 0, h - 1)
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            cell = yi * w + xi
            lo += wgt * flat[cell, i0]
            hi += wgt * flat[cell, i1]
    out = lo * (1.0 - frac) + np.where(i1 > i0, hi * frac, 0.0)
    return np.where(in_range, out, 0.0)


def oracle_distribution(d: float, bins: DepthBins, sigma: float = 0.0) -> np.ndarray:
    """Synthetic depth distribution standing in for a learned depth net.

    sigma = 0 returns the exact two-hot encoding; sigma > 0 returns a Gaussian
    over bin centers, renormalized.  Non-finite depths (the no-hit sentinel)
    yield the all-zero vector.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    if not np.isfinite(d):
        return np.zeros(bins.count, dtype=np.float64)
    if sigma == 0.0:
        return two_hot(d, bins)
    z = (bins.centers() - d) / sigma
    z2 = 0.5 * z * z
    w = np.exp(-(z2 - z2.min()))        # shift before exp so far depths cannot underflow to all-zero
    return w / w.sum()


def oracle_dist_map(depth_map: np.ndarray, bins: DepthBins, sigma: float = 0.0) -> DepthDistMap:
    """Apply oracle_distribution to every cell of a rendered depth map."""
    depth_map = np.asarray(depth_map, dtype=np.float64)
    h, w = depth_map.shape
    grid = np.zeros((h, w, bins.count), dtype=np.float64)
    finite = np.isfinite(depth_map)
    if sigma == 0.0:
        ds = depth_map[finite]
        in_range = (ds >= bins.d0) & (ds <= bins.max_depth)
        pos = np.where(in_range, (ds - bins.d0) / bins.delta, 0.0)
        i0 = np.minimum(np.floor(pos).astype(np.int64), bins.count - 1)
        frac = pos - i0
        i1 = np.minimum(i0 + 1, bins.count - 1)
        rows = np.zeros((ds.size, bins.count), dtype=np.float64)
        idx = np.arange(ds.size)
        np.add.at(rows, (idx, i0), np.where(in_range, 1.0 - frac, 0.0))
        np.add.at(rows, (idx, i1), np.where(in_range & (i1 > i0), frac, 0.0))
        grid[finite] = rows
    else:
        z = (bins.centers()[None, :] - depth_map[finite][:, None]) / sigma
        z2 = 0.5 * z * z
        w_rows = np.exp(-(z2 - z2.min(axis=1, keepdims=True)))
        grid[finite] = w_rows / w_rows.sum(axis=1, keepdims=True)
    return DepthDistMap(bins=bins, grid=grid)

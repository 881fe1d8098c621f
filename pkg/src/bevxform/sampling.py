"""Bilinear sampling over channel-last grids, shared by depth map lookup,
deformable attention, and temporal BEV warping.

Coordinates follow the cell-center convention: cell (row j, col i) of a grid is
centered at (x, y) = (i + 0.5, j + 0.5).  Two edge policies are supported:

- "edge": coordinates are clamped so samples at or beyond the border return the
  border cell value (no zeros are invented).
- "zeros": contributions from outside the grid are zero.
"""
from __future__ import annotations

import numpy as np


def bilinear(grid: np.ndarray, x, y, mode: str = "edge") -> np.ndarray:
    """Sample grid (H, W, C) at continuous (x, y); returns (N, C) for 1-D input.

    Scalar x, y return a (C,) vector.
    """
    if mode not in ("edge", "zeros"):
        raise ValueError(f"unknown edge mode {mode!r}")
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3:
        raise ValueError(f"grid must be (H, W, C), got shape {grid.shape}")
    scalar = np.isscalar(x) and np.isscalar(y)
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64)).ravel()
    ys = np.atleast_1d(np.asarray(y, dtype=np.float64)).ravel()
    if xs.shape != ys.shape:
        raise ValueError("x and y must have matching shapes")
    h, w, c = grid.shape
    flat = grid.reshape(h * w, c)

    if mode == "edge":
        # Clamping the coordinate itself reproduces clamp-to-edge exactly.
        xs = np.clip(xs, 0.5, w - 0.5)
        ys = np.clip(ys, 0.5, h - 0.5)

    gx = xs - 0.5
    gy = ys - 0.5
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = gx - x0
    fy = gy - y0

    out = np.zeros((xs.size, c), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            if mode == "zeros":
                inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
                wgt = np.where(inside, wgt, 0.0)
            xi = np.clip(xi, 0, w - 1)
            yi = np.clip(yi, 0, h - 1)
            out += wgt[:, None] * flat[yi * w + xi]
    return out[0] if scalar else out

"""Foreground region proposal over BEV grids: a 3x3 conv + sigmoid mask head,
ground-truth mask rasterization from 3D boxes, Dice and cross-entropy losses,
and thresholded query selection.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import BevGrid, BevSpec

# Smoothing constant in the Dice loss denominator and numerator.
DICE_EPS = 1.0
# Probability clamp for the cross-entropy loss.
BCE_CLAMP = 1e-7
# Logit magnitude used when promoting a binary mask to an oracle ForegroundMask.
ORACLE_LOGIT = 20.0


@dataclass(frozen=True)
class MaskHeadWeights:
    """3x3 conv kernel (3, 3, C) plus scalar bias for the mask head."""

    kernel: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 3 or k.shape[:2] != (3, 3):
            raise ValueError(f"kernel must be (3, 3, C), got {k.shape}")
        if not (np.all(np.isfinite(k)) and np.isfinite(self.bias)):
            raise ValueError("mask head weights must be finite")
        object.__setattr__(self, "kernel", k)


@dataclass(frozen=True)
class ForegroundMask:
    """Per-cell foreground logits and their sigmoid probabilities."""

    logits: np.ndarray
    probabilities: np.ndarray

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "ForegroundMask":
        logits = np.asarray(logits, dtype=np.float64)
        return cls(logits=logits, probabilities=1.0 / (1.0 + np.exp(-logits)))


@dataclass(frozen=True)
class Box3D:
    """Upright 3D box: center, (length, width, height) sizes, and heading yaw.

    Length runs along the heading direction; yaw is measured in the BEV plane
    from the +x axis toward +y.
    """

    center: np.ndarray
    size: np.ndarray
    yaw: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        s = np.asarray(self.size, dtype=np.float64)
        if c.shape != (3,) or s.shape != (3,):
            raise ValueError("center and size must be 3-vectors")
        if np.any(s <= 0.0):
            raise ValueError("box sizes must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)


@dataclass(frozen=True)
class BevQuery:
    """One selected BEV cell: column x, row y, and its feature vector (zero if blank)."""

    x: int
    y: int
    feature: np.ndarray


def mask_head(grid: BevGrid, weights: MaskHeadWeights) -> ForegroundMask:
    """3x3 cross-correlation with zero padding, plus bias, then sigmoid."""
    feats = grid.features
    c = feats.shape[2]
    if weights.kernel.shape[2] != c:
        raise ValueError(f"kernel has {weights.kernel.shape[2]} channels, grid has {c}")
    h, w = feats.shape[:2]
    padded = np.zeros((h + 2, w + 2, c), dtype=np.float64)
    padded[1:-1, 1:-1] = feats
    logits = np.full((h, w), weights.bias, dtype=np.float64)
    for ky in range(3):
        for kx in range(3):
            logits += padded[ky:ky + h, kx:kx + w] @ weights.kernel[ky, kx]
    return ForegroundMask.from_logits(logits)


def footprint_contains(box: Box3D, x, y) -> np.ndarray:
    """True where BEV points (x, y) fall inside the box footprint (closed boundary)."""
    xs = np.asarray(x, dtype=np.float64) - box.center[0]
    ys = np.asarray(y, dtype=np.float64) - box.center[1]
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    # Rotate into the box frame: heading axis first.
    along = c * xs + s * ys
    across = -s * xs + c * ys
    return (np.abs(along) <= box.size[0] / 2.0) & (np.abs(across) <= box.size[1] / 2.0)


def rasterize_gt_mask(boxes: list[Box3D], spec: BevSpec) -> np.ndarray:
    """Binary (grid_h, grid_w) mask: 1 where a cell center lies in any box footprint."""
    xs = spec.x_min + (np.arange(spec.grid_w) + 0.5) * spec.cell_w
    ys = spec.y_min + (np.arange(spec.grid_h) + 0.5) * spec.cell_h
    xx, yy = np.meshgrid(xs, ys, indexing="xy")
    mask = np.zeros((spec.grid_h, spec.grid_w), dtype=bool)
    for box in boxes:
        mask |= footprint_contains(box, xx, yy)
    return mask.astype(np.float64)


def dice_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Smooth Dice loss: 1 - (2 * overlap + eps) / (pred sum + gt sum + eps)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    overlap = float((pred * gt).sum())
    return 1.0 - (2.0 * overlap + DICE_EPS) / (float(pred.sum()) + float(gt.sum()) + DICE_EPS)


def bce_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean binary cross-entropy with predictions clamped away from 0 and 1."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(np.mean(-(gt * np.log(p) + (1.0 - gt) * np.log(1.0 - p))))


def mask_loss(pred: np.ndarray, gt: np.ndarray, dice_weight: float = 1.0, bce_weight: float = 1.0) -> float:
    """Combined Dice + cross-entropy objective with configurable weights."""
    return dice_weight * dice_loss(pred, gt) + bce_weight * bce_loss(pred, gt)


def mask_from_binary(binary: np.ndarray) -> ForegroundMask:
    """Promote a 0/1 mask to a saturated ForegroundMask (oracle stand-in for the head)."""
    binary = np.asarray(binary, dtype=np.float64)
    return ForegroundMask.from_logits(np.where(binary > 0.5, ORACLE_LOGIT, -ORACLE_LOGIT))


def select_queries(grid: BevGrid, mask: ForegroundMask, t_f: float = 0.4) -> list[BevQuery]:
    """Return the cells with foreground probability strictly above t_f.

    Order is row-major.  Blank cells are included with their (all-zero) feature
    vectors so the backward pass can fill them in.
    """
    if not 0.0 < t_f < 1.0:
        raise ValueError("t_f must be in (0, 1)")
    if mask.probabilities.shape != grid.occupied.shape:
        raise ValueError(
            f"mask shape {mask.probabilities.shape} != grid shape {grid.occupied.shape}"
        )
    picked = np.argwhere(mask.probabilities > t_f)
    return [BevQuery(x=int(x), y=int(y), feature=grid.features[y, x].copy()) for y, x in picked]

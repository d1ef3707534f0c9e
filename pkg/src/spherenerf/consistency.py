"""Consistency masking of augmented rays and far-viewpoint weight clipping.

An augmented ray is kept only when its peak blending weight lands within
epsilon coarse-grid indices of the original's peak. The comparison is valid
only on matching equal-interval grids, which the augmentation construction
guarantees for surface-sphere rays.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import DegenerateDirection, GridMismatch, IndexOutOfRange

CLIP_OFF = "off"
CLIP_ANGLE = "angle_threshold"
MASK_ARGMAX = "argmax"
MASK_RENDERED_DEPTH = "rendered_depth"

_GRID_TOL = 1e-9


@dataclass(frozen=True)
class MaskConfig:
    epsilon: int = 2                      # index tolerance, coarse-sample units
    clip_mode: str = CLIP_OFF             # "off" or "angle_threshold"
    clip_angle: float = np.pi / 3.0       # radians, used by "angle_threshold"
    mask_source: str = MASK_ARGMAX        # "argmax" or "rendered_depth"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.clip_mode not in (CLIP_OFF, CLIP_ANGLE):
            raise ValueError(f"unknown clip_mode {self.clip_mode!r}")
        if self.mask_source not in (MASK_ARGMAX, MASK_RENDERED_DEPTH):
            raise ValueError(f"unknown mask_source {self.mask_source!r}")


def _check_grids(grid_a, grid_b) -> float:
    """Validate matching equal-interval grids; returns the shared delta."""
    da = np.asarray(grid_a.deltas)
    db = np.asarray(grid_b.deltas)
    if da.shape != db.shape:
        raise GridMismatch(f"grids have {da.shape[0]} vs {db.shape[0]} samples")
    if np.max(np.abs(da - da[0])) > _GRID_TOL or np.max(np.abs(db - db[0])) > _GRID_TOL:
        raise GridMismatch("mask requires equal-interval grids")
    if abs(da[0] - db[0]) > _GRID_TOL:
        raise GridMismatch(f"grid spacings differ: {da[0]} vs {db[0]}")
    return float(da[0])


def consistency_mask(original, augmented, cfg: MaskConfig) -> bool:
    """True when the augmented ray appears to reach the original's surface.

    argmax mode compares peak-weight indices with tolerance epsilon;
    rendered_depth mode (the ablation arm) compares rendered depths against
    epsilon grid spacings. Inputs are BlendingProfiles; no gradients flow.
    """
    delta = _check_grids(original.grid, augmented.grid)
    if cfg.mask_source == MASK_ARGMAX:
        return abs(original.argmax_index - augmented.argmax_index) <= cfg.epsilon
    d_orig = float(original.rendered_depth.detach())
    d_aug = float(augmented.rendered_depth.detach())
    return abs(d_orig - d_aug) <= cfg.epsilon * delta


def consistency_mask_batch(original, augmented, cfg: MaskConfig) -> np.ndarray:
    """Vectorized consistency_mask over two ProfileBatches; returns (B,) bool."""
    da, db = original.deltas, augmented.deltas
    if da.shape != db.shape:
        raise GridMismatch(f"batch grids have shapes {da.shape} vs {db.shape}")
    if np.max(np.abs(da - da[:, :1])) > _GRID_TOL or np.max(np.abs(db - db[:, :1])) > _GRID_TOL:
        raise GridMismatch("mask requires equal-interval grids")
    if np.max(np.abs(da[:, 0] - db[:, 0])) > _GRID_TOL:
        raise GridMismatch("grid spacings differ between original and augmented rays")
    if cfg.mask_source == MASK_ARGMAX:
        return np.abs(original.argmax_index - augmented.argmax_index) <= cfg.epsilon
    gap = np.abs(original.rendered_depth.detach().numpy()
                 - augmented.rendered_depth.detach().numpy())
    return gap <= cfg.epsilon * da[:, 0]


def clip_weights(weights, s: int):
    """Copy of `weights` with every entry after index s set to zero."""
    n = weights.shape[-1]
    if not 0 <= s < n:
        raise IndexOutOfRange(f"argmax index {s} outside [0, {n})")
    if torch.is_tensor(weights):
        keep = torch.arange(n) <= s
        return torch.where(keep, weights, torch.zeros((), dtype=weights.dtype))
    out = np.array(weights, dtype=np.float64)
    out[s + 1:] = 0.0
    return out


def should_clip(original_dir, augmented_dir, cfg: MaskConfig) -> bool:
    """Whether the augmented viewpoint is far enough to trigger clipping."""
    if cfg.clip_mode == CLIP_OFF:
        return False
    a = np.asarray(original_dir, dtype=np.float64)
    b = np.asarray(augmented_dir, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise DegenerateDirection("cannot measure the angle of a zero direction")
    cos = np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)
    return float(np.arccos(cos)) > cfg.clip_angle


def should_clip_batch(original_dirs: np.ndarray, augmented_dirs: np.ndarray,
                      cfg: MaskConfig) -> np.ndarray:
    if cfg.clip_mode == CLIP_OFF:
        return np.zeros(original_dirs.shape[0], dtype=bool)
    na = np.linalg.norm(original_dirs, axis=1)
    nb = np.linalg.norm(augmented_dirs, axis=1)
    if np.any(na < 1e-12) or np.any(nb < 1e-12):
        raise DegenerateDirection("cannot measure the angle of a zero direction")
    cos = np.clip(np.sum(original_dirs * augmented_dirs, axis=1) / (na * nb), -1.0, 1.0)
    return np.arccos(cos) > cfg.clip_angle

"""Lifting per-view feature maps onto Gaussians.

Each Gaussian accumulates a rendering-weight-normalized average of the 2D
features it contributed to; truncating each pixel's contributor list to its
k heaviest entries interpolates between hard assignment (k = 1, features go
only to the dominant Gaussian) and full soft assignment (k = "all").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .rasterizer import ContributionMap, K_MAX
from .scene import FeatureMap, GaussianScene, ValidationError


@dataclass(frozen=True)
class LiftConfig:
    top_k: int | str = "all"     # int in [1, 255] or "all"
    normalize_output: bool = True

    def k_value(self) -> int:
        if self.top_k == "all":
            return K_MAX
        k = int(self.top_k)
        if not 1 <= k <= K_MAX:
            raise ValidationError(f"top_k must be in [1, {K_MAX}] or 'all', got {k}")
        return k


def lift(feature_maps: list[FeatureMap], contributions: list[ContributionMap],
         gaussian_count: int, cfg: LiftConfig = LiftConfig()) -> np.ndarray:
    """Aggregate per-view pixel features into an (N, C) per-Gaussian matrix.

    Weight normalization is global over every (view, pixel) pair a Gaussian
    touches, not per view. Gaussians with no contributions get zero rows;
    nonzero rows are unit-normalized when ``normalize_output`` is set.
    Accumulation runs in (view, pixel, record) order so results do not depend
    on scheduling.
    """
    if len(feature_maps) != len(contributions):
        raise ValidationError(
            f"got {len(feature_maps)} feature maps for {len(contributions)} "
            "contribution maps")
    if not feature_maps:
        raise ValidationError("lift needs at least one view")
    channels = feature_maps[0].channels
    k = cfg.k_value()

    selections = []
    for fm, cm in zip(feature_maps, contributions):
        if (fm.height, fm.width) != (cm.height, cm.width):
            raise ValidationError(
                f"view {fm.view_id}: feature map {fm.height}x{fm.width} vs "
                f"contribution map {cm.height}x{cm.width}")
        if fm.channels != channels:
            raise ValidationError(f"view {fm.view_id}: inconsistent channel count")
        if cm.ids.size and int(cm.ids.max()) >= gaussian_count:
            raise ValidationError(
                f"view {fm.view_id}: gaussian id {int(cm.ids.max())} out of range "
                f"(N = {gaussian_count})")
        sel = np.zeros(cm.ids.shape[0], dtype=np.bool_)
        _kernels.topk_select(cm.offsets, cm.weights, k, sel)
        selections.append(sel)

    denom = np.zeros(gaussian_count)
    for cm, sel in zip(contributions, selections):
        _kernels.lift_denominators(cm.offsets, cm.ids, cm.weights, sel, denom)

    safe_denom = np.where(denom > 0, denom, 1.0)
    acc = np.zeros((gaussian_count, channels))
    for fm, cm, sel in zip(feature_maps, contributions, selections):
        flat = np.ascontiguousarray(
            fm.data.reshape(-1, channels), dtype=np.float64)
        _kernels.lift_numerators(cm.offsets, cm.ids, cm.weights, sel, flat,
                                 safe_denom, acc)

    if cfg.normalize_output:
        norms = np.linalg.norm(acc, axis=1)
        nonzero = norms > 1e-12
        acc[nonzero] /= norms[nonzero, None]
    dtype = feature_maps[0].data.dtype
    return acc.astype(dtype) if dtype == np.float32 else acc


def attach_features(scene: GaussianScene, features: np.ndarray) -> GaussianScene:
    """Return a copy of the scene carrying the lifted feature matrix."""
    return scene.with_features(features)

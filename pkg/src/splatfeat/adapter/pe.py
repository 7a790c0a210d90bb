"""Sinusoidal positional encoding of each pixel's dominant Gaussian.

The rendered feature grid is augmented, not replaced: the encoding of the
dominant Gaussian's bbox-normalized center and its rendering weight is added
channelwise. Channel budget: four encoded scalars at D' = C/4 channels each.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rasterizer import DominantMap
from ..scene import FeatureMap, GaussianScene, ValidationError


@dataclass(frozen=True)
class PEConfig:
    omega0: float = 10000.0
    bbox_min: np.ndarray | None = None
    bbox_max: np.ndarray | None = None

    @classmethod
    def for_scene(cls, scene: GaussianScene, omega0: float = 10000.0) -> "PEConfig":
        lo, hi = scene.bbox
        return cls(omega0, lo, hi)


def sinusoidal_encode(values: np.ndarray, d_prime: int, omega0: float) -> np.ndarray:
    """gamma(v): (sin(w_k v), cos(w_k v)) pairs, w_k = omega0^(-2k/D')."""
    if d_prime % 2:
        raise ValidationError(f"encoding width D'={d_prime} must be even")
    k = np.arange(d_prime // 2)
    omega = omega0 ** (-2.0 * k / d_prime)
    phase = values[..., None] * omega
    out = np.empty(values.shape + (d_prime,))
    out[..., 0::2] = np.sin(phase)
    out[..., 1::2] = np.cos(phase)
    return out


def gs_pe(rendered: FeatureMap, dominant: DominantMap, scene: GaussianScene,
          cfg: PEConfig | None = None) -> FeatureMap:
    """Add the dominant-Gaussian positional code to a rendered feature map.

    Pixels without a dominant Gaussian encode position (0, 0, 0) and weight
    0, keeping the output shape-stable.
    """
    rendered.require_pe_compatible()
    c = rendered.channels
    d_prime = c // 4
    if cfg is None:
        cfg = PEConfig.for_scene(scene)
    lo = cfg.bbox_min if cfg.bbox_min is not None else scene.bbox[0]
    hi = cfg.bbox_max if cfg.bbox_max is not None else scene.bbox[1]
    extent = np.maximum(np.asarray(hi, dtype=np.float64) - lo, 1e-12)

    ids = dominant.ids
    if ids.shape != (rendered.height, rendered.width):
        raise ValidationError(
            f"dominant map {ids.shape} does not match feature grid "
            f"{(rendered.height, rendered.width)}")
    hit = ids >= 0
    coords = np.zeros((rendered.height, rendered.width, 3))
    coords[hit] = (scene.positions[ids[hit]] - lo) / extent
    weights = np.where(hit, dominant.weights, 0.0)

    blocks = [sinusoidal_encode(coords[..., i], d_prime, cfg.omega0)
              for i in range(3)]
    blocks.append(sinusoidal_encode(weights, d_prime, cfg.omega0))
    encoding = np.concatenate(blocks, axis=-1)
    return FeatureMap(rendered.view_id, rendered.data + encoding,
                      rendered.downsample)

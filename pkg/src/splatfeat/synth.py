"""Seeded synthetic test-bed generation: scenes, camera rings, feature stacks.

Two scene layouts: "sites" places well-separated near-opaque splat pairs (the
regime where lifting is lossless), "cloud" scatters anisotropic Gaussians of
mixed opacity (a realistic rendering load). Ground-truth per-Gaussian
features are random unit vectors times ``feature_gain``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rasterizer import RasterConfig, rasterize_features
from .scene import CameraView, FeatureMap, GaussianScene, make_scene


@dataclass(frozen=True)
class SynthBundle:
    scene: GaussianScene          # carries the ground-truth features
    views: list[CameraView]
    feature_maps: list[FeatureMap]  # per-view renders of the true features


def ring_views(count: int, width: int = 64, height: int = 64,
               focal: float = 80.0, radius: float = 2.5) -> list[CameraView]:
    views = []
    for i in range(count):
        angle = 2.0 * np.pi * i / count
        center = np.array([radius * np.sin(angle), 0.0, -radius * np.cos(angle)])
        fwd = -center / np.linalg.norm(center)
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(up, fwd)
        right /= np.linalg.norm(right)
        true_up = np.cross(fwd, right)
        R = np.stack([right, true_up, fwd])
        w2c = np.eye(4)
        w2c[:3, :3] = R
        w2c[:3, 3] = -R @ center
        views.append(CameraView(f"view{i}", focal, focal, width / 2.0,
                                height / 2.0, width, height, w2c))
    return views


def synth_scene(n_gaussians: int, feature_dim: int, seed: int,
                layout: str = "cloud", feature_gain: float = 1.0,
                spread: float = 1.0) -> GaussianScene:
    rng = np.random.default_rng(seed)
    if layout == "cloud":
        n = n_gaussians
        positions = rng.uniform(-0.5 * spread, 0.5 * spread, size=(n, 3))
        rotations = rng.normal(size=(n, 4))
        scales = np.exp(rng.uniform(np.log(0.01 * spread), np.log(0.08 * spread),
                                    size=(n, 3)))
        opacities = rng.uniform(0.3, 0.98, size=n)
    elif layout == "sites":
        sites = (n_gaussians + 1) // 2
        centers = rng.uniform(-0.45 * spread, 0.45 * spread, size=(sites, 3))
        positions = np.repeat(centers, 2, axis=0)[:n_gaussians]
        n = positions.shape[0]
        rotations = np.tile([1.0, 0, 0, 0], (n, 1))
        scales = np.full((n, 3), 0.05 * spread)
        opacities = np.full(n, 0.9999)
    else:
        raise ValueError(f"unknown layout {layout!r}")

    feats = rng.normal(size=(n, feature_dim))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    if layout == "sites":
        # Coincident pairs share one feature so each surface point is coherent.
        feats[1::2] = feats[0::2][:feats[1::2].shape[0]]
    sh_dc = rng.uniform(-1.0, 1.0, size=(n, 3))
    return make_scene(positions, rotations, scales, opacities, sh_dc,
                      feats * feature_gain)


def synth_bundle(n_gaussians: int, n_views: int, feature_dim: int, seed: int,
                 width: int = 64, height: int = 64, focal: float = 80.0,
                 layout: str = "cloud", feature_gain: float = 1.0,
                 config: RasterConfig = RasterConfig()) -> SynthBundle:
    """Scene plus per-view ground-truth feature renders."""
    scene = synth_scene(n_gaussians, feature_dim, seed, layout, feature_gain)
    views = ring_views(n_views, width, height, focal)
    maps = []
    for v in views:
        res = rasterize_features(scene, v, config)
        maps.append(FeatureMap(v.view_id, res.image))
    return SynthBundle(scene, views, maps)


def bench_scene(n_gaussians: int, feature_dim: int, seed: int) -> GaussianScene:
    """Surface-like load for throughput benchmarks: small opaque splats."""
    rng = np.random.default_rng(seed)
    n = n_gaussians
    positions = rng.uniform(-0.5, 0.5, size=(n, 3))
    rotations = rng.normal(size=(n, 4))
    scales = np.exp(rng.uniform(np.log(0.004), np.log(0.02), size=(n, 3)))
    opacities = rng.uniform(0.5, 0.99, size=n)
    feats = rng.normal(size=(n, feature_dim))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    sh_dc = rng.uniform(-1.0, 1.0, size=(n, 3))
    return make_scene(positions, rotations, scales, opacities, sh_dc, feats)

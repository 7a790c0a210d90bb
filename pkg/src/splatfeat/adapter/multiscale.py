"""Multi-scale encoder feature aggregation and redistribution.

Aggregation projects each scale to the shared channel width, resizes to the
target grid, and folds scales together coarse to fine with a running
average. Scatter resizes the corrected feature back to each scale and
projects to that scale's channel width; callers add the results as skips.

Bilinear resizing is written in lerp form (a + t * (b - a)), which preserves
constant inputs exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene import ValidationError


@dataclass(frozen=True)
class ScaleSpec:
    channels: int
    factor: int  # spatial size multiplier relative to the target grid


@dataclass(frozen=True)
class MultiScaleConfig:
    scales: tuple[ScaleSpec, ...]  # coarse to fine
    target_hw: tuple[int, int]
    fused_channels: int

    def __post_init__(self):
        if not self.scales:
            raise ValidationError("need at least one scale")
        for s in self.scales:
            if s.factor < 1 or (s.factor & (s.factor - 1)):
                raise ValidationError(
                    f"scale factor {s.factor} is not a power of two")


@dataclass
class MultiScaleParams:
    """1x1 projections in (aggregate) and out (scatter) per scale."""

    proj_in: list[tuple[np.ndarray, np.ndarray]]   # (C_fused, C_s), (C_fused,)
    proj_out: list[tuple[np.ndarray, np.ndarray]]  # (C_s, C_fused), (C_s,)


def init_multiscale(cfg: MultiScaleConfig, seed: int = 0) -> MultiScaleParams:
    rng = np.random.default_rng(seed)
    proj_in, proj_out = [], []
    for s in cfg.scales:
        std = 1.0 / np.sqrt(max(s.channels, 1))
        proj_in.append((rng.normal(0, std, (cfg.fused_channels, s.channels)),
                        np.zeros(cfg.fused_channels)))
        proj_out.append((rng.normal(0, std, (s.channels, cfg.fused_channels)),
                         np.zeros(s.channels)))
    return MultiScaleParams(proj_in, proj_out)


def identity_multiscale(cfg: MultiScaleConfig) -> MultiScaleParams:
    proj_in, proj_out = [], []
    for s in cfg.scales:
        win = np.zeros((cfg.fused_channels, s.channels))
        np.fill_diagonal(win, 1.0)
        wout = np.zeros((s.channels, cfg.fused_channels))
        np.fill_diagonal(wout, 1.0)
        proj_in.append((win, np.zeros(cfg.fused_channels)))
        proj_out.append((wout, np.zeros(s.channels)))
    return MultiScaleParams(proj_in, proj_out)


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered bilinear resampling; exact on constants."""
    h, w, c = x.shape
    if (h, w) == (out_h, out_w):
        return x.copy()

    def axis_coords(n_in, n_out):
        coords = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        coords = np.clip(coords, 0.0, n_in - 1.0)
        lo = np.floor(coords).astype(np.int64)
        lo = np.minimum(lo, n_in - 2) if n_in > 1 else np.zeros_like(lo)
        t = coords - lo
        return lo, t

    ylo, ty = axis_coords(h, out_h)
    xlo, tx = axis_coords(w, out_w)
    if h == 1:
        rows_lo = rows_hi = x[0][None]
        ty = np.zeros(out_h)
    else:
        rows_lo = x[ylo]
        rows_hi = x[ylo + 1]
    rows = rows_lo + ty[:, None, None] * (rows_hi - rows_lo)
    if w == 1:
        cols_lo = cols_hi = rows[:, 0][:, None]
        tx = np.zeros(out_w)
    else:
        cols_lo = rows[:, xlo]
        cols_hi = rows[:, xlo + 1]
    return cols_lo + tx[None, :, None] * (cols_hi - cols_lo)


def multiscale_aggregate(features: list[np.ndarray], cfg: MultiScaleConfig,
                         params: MultiScaleParams) -> np.ndarray:
    """Fuse coarse-to-fine encoder grids into one (target_h, target_w, C)."""
    if len(features) != len(cfg.scales):
        raise ValidationError(
            f"got {len(features)} feature grids for {len(cfg.scales)} scales")
    th, tw = cfg.target_hw
    merged = None
    for x, spec, (w_in, b_in) in zip(features, cfg.scales, params.proj_in):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape[2] != spec.channels:
            raise ValidationError(
                f"scale with factor {spec.factor}: expected {spec.channels} "
                f"channels, got {x.shape[2]}")
        proj = x @ w_in.T + b_in
        resized = bilinear_resize(proj, th, tw)
        if merged is None:
            merged = resized
        else:
            merged = merged + 0.5 * (resized - merged)  # running pairwise average
    return merged


def multiscale_scatter(fused: np.ndarray, cfg: MultiScaleConfig,
                       params: MultiScaleParams,
                       sizes: list[tuple[int, int]]) -> list[np.ndarray]:
    """Resize the fused grid back to each scale and project to its width."""
    if len(sizes) != len(cfg.scales):
        raise ValidationError("sizes list must match configured scales")
    outputs = []
    for spec, (w_out, b_out), (sh, sw) in zip(cfg.scales, params.proj_out, sizes):
        resized = bilinear_resize(np.ascontiguousarray(fused, dtype=np.float64),
                                  sh, sw)
        outputs.append(resized @ w_out.T + b_out)
    return outputs

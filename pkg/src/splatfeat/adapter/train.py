"""Desk-scale trainer for the adaptation heads on synthetic scenes.

The surrogate objective stands in for the backbone-bound latent term: mean
squared error between fused target-view features and the ground-truth
target features, plus the feature-consistency loss on reference views at
its shipped weight of 0.05. Optimization is plain gradient descent in
double precision; runs are deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rasterizer import RasterConfig, compute_contributions, composite_values
from ..scene import FeatureMap, ValidationError
from ..uplift import LiftConfig, lift
from . import nets
from .params import FusionParams, init_params
from .pe import PEConfig, gs_pe

FEAT_LOSS_WEIGHT = 0.05


class DivergenceError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"training diverged (non-finite loss) at step {step}")
        self.step = step


@dataclass
class ToyTask:
    """Fixed tensors for one synthetic training problem.

    All stacks are (V, H, W, C). ``f_tar`` is the degraded stand-in for
    diffusion features; ``f_tar_gt`` is what fusion should reconstruct.
    """

    f_ref: np.ndarray
    f_tar: np.ndarray
    f_tar_gt: np.ndarray
    g_ref_pe: np.ndarray
    g_tar_pe: np.ndarray


@dataclass
class TrainResult:
    params: FusionParams
    losses: list[float]
    surrogate_losses: list[float]
    feature_losses: list[float]


def build_toy_task(n_gaussians: int = 3, ref_count: int = 2,
                   tar_count: int = 2, feature_dim: int = 8,
                   size: int = 16, seed: int = 0,
                   degrade: float = 0.5,
                   feature_gain: float = 10.0,
                   config: RasterConfig = RasterConfig()) -> ToyTask:
    """Synthesize a scene, lift its reference features, and render the
    geometry branch for every view.

    The first Gaussian is a broad backdrop so every pixel carries geometry;
    zero-coverage pixels would pin the feature-consistency loss at its
    orthogonal-convention floor and stall training.
    """
    from ..rasterizer import rasterize_features
    from ..scene import make_scene
    from ..synth import ring_views

    rng = np.random.default_rng(seed)
    positions = np.vstack([[0.0, 0.0, 0.0],
                           rng.uniform(-0.4, 0.4, size=(n_gaussians - 1, 3))])
    scales = np.vstack([[1.6, 1.6, 0.4],
                        rng.uniform(0.15, 0.3, size=(n_gaussians - 1, 3))])
    opacities = np.concatenate([[0.95], rng.uniform(0.6, 0.9, n_gaussians - 1)])
    feats = rng.normal(size=(n_gaussians, feature_dim))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    scene = make_scene(positions, None, scales, opacities,
                       rng.uniform(-1, 1, (n_gaussians, 3)),
                       feats * feature_gain)
    views = ring_views(ref_count + tar_count, width=size, height=size,
                       focal=1.25 * size)
    gt_maps = [rasterize_features(scene, v, config).image for v in views]

    contribs, doms = [], []
    for v in views:
        cm, dom, _ = compute_contributions(scene, v, config)
        contribs.append(cm)
        doms.append(dom)

    lifted = lift([FeatureMap(views[i].view_id, gt_maps[i])
                   for i in range(ref_count)],
                  contribs[:ref_count], len(scene),
                  LiftConfig(normalize_output=False))
    pe_cfg = PEConfig.for_scene(scene)
    g_pe = []
    for i, v in enumerate(views):
        g = composite_values(contribs[i], lifted)
        fm = gs_pe(FeatureMap(v.view_id, g), doms[i], scene, pe_cfg)
        g_pe.append(fm.data)

    f_ref = np.stack(gt_maps[:ref_count])
    f_tar_gt = np.stack(gt_maps[ref_count:])
    f_tar = degrade * f_tar_gt
    return ToyTask(f_ref, f_tar, f_tar_gt,
                   np.stack(g_pe[:ref_count]), np.stack(g_pe[ref_count:]))


def _loss_and_grads(task: ToyTask, params: FusionParams,
                    feat_weight: float):
    grads = {name: np.zeros_like(arr) for name, arr in params.tensor_items()}

    def add(g):
        for name, arr in g.items():
            grads[name] += arr

    # Reference branch: refine and score feature consistency.
    refined_ref, ref_caches = [], []
    for v in range(task.g_ref_pe.shape[0]):
        out, cache = nets.refine(task.g_ref_pe[v], params)
        refined_ref.append(out)
        ref_caches.append(cache)
    l_feat, d_refined, _ = nets.feature_loss(np.stack(refined_ref), task.f_ref)
    for v in range(task.g_ref_pe.shape[0]):
        _, g = nets.refine_backward(ref_caches[v], params,
                                    feat_weight * d_refined[v])
        add(g)

    # Target branch: refine, project, fuse, score the surrogate.
    l_surr = 0.0
    n_tar = task.g_tar_pe.shape[0]
    denom = task.f_tar_gt.size
    for v in range(n_tar):
        refined, r_cache = nets.refine(task.g_tar_pe[v], params)
        g_tilde, p_cache = nets.project_channels(refined, params)
        fused, _, a_cache = nets.adaptive_fuse(task.f_tar[v], g_tilde, params)
        diff = fused - task.f_tar_gt[v]
        l_surr += float(np.sum(diff * diff))
        d_fused = 2.0 * diff / denom
        _, d_gtilde, g = nets.adaptive_fuse_backward(a_cache, d_fused)
        add(g)
        d_refined_t, g = nets.project_channels_backward(p_cache, params, d_gtilde)
        add(g)
        _, g = nets.refine_backward(r_cache, params, d_refined_t)
        add(g)
    l_surr /= denom

    total = l_surr + feat_weight * l_feat
    return total, l_surr, l_feat, grads


def toy_train(task: ToyTask, params: FusionParams | None = None,
              steps: int = 200, lr: float = 0.01,
              feat_weight: float = FEAT_LOSS_WEIGHT,
              seed: int = 0) -> TrainResult:
    """Plain gradient descent; aborts with the step index on divergence."""
    if params is None:
        c = task.f_ref.shape[-1]
        params = init_params(c, seed=seed, zero_gate=True)
    else:
        params = params.copy()

    losses, surr, feat = [], [], []
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(steps):
            total, l_surr, l_feat, grads = _loss_and_grads(task, params,
                                                           feat_weight)
            if not np.isfinite(total):
                raise DivergenceError(step)
            losses.append(total)
            surr.append(l_surr)
            feat.append(l_feat)
            if lr != 0.0:
                for name, g in grads.items():
                    arr = params.get_tensor(name)
                    params.set_tensor(name, arr - lr * g)
    return TrainResult(params, losses, surr, feat)

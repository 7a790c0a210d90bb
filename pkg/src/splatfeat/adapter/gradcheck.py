"""Central finite-difference verification of every analytic gradient.

Each check contracts the op's outputs with a fixed random functional so the
whole backward path (including multi-output ops) reduces to one scalar, then
compares the analytic gradient of that scalar against central differences
coordinate by coordinate.
"""

from __future__ import annotations

import numpy as np

from . import nets
from .params import FusionParams, init_params

FD_STEP = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0),
                np.abs(numeric).max(initial=0.0), 1e-10)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _fd_grad(fn, arr: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.shape[0]):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn()
        flat[i] = orig - h
        lo = fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def _rand_params(rng, channels=8, depth=2, n_heads=2) -> FusionParams:
    p = init_params(channels, depth=depth, n_heads=n_heads,
                    seed=int(rng.integers(2 ** 31)))
    # Nondegenerate gate and normalization parameters for the checks.
    for blk in p.refine_blocks:
        blk.gamma = rng.normal(1.0, 0.2, size=channels)
        blk.beta = rng.normal(0.0, 0.2, size=channels)
    p.gate_w2 = rng.normal(0.0, 0.5, size=p.gate_w2.shape)
    p.gate_b2 = rng.normal(0.0, 0.2, size=p.gate_b2.shape)
    return p


def check_feature_loss(seed: int, shape=(2, 4, 4, 8)) -> float:
    rng = np.random.default_rng(seed)
    refined = rng.normal(size=shape)
    target = rng.normal(size=shape)
    _, analytic, _ = nets.feature_loss(refined, target)
    numeric = _fd_grad(lambda: nets.feature_loss(refined, target)[0], refined)
    return relative_error(analytic, numeric)


def check_refine(seed: int, shape=(4, 4, 8), depth=2) -> float:
    rng = np.random.default_rng(seed)
    params = _rand_params(rng, channels=shape[2], depth=depth)
    x = rng.normal(size=shape)
    probe = rng.normal(size=shape)

    def loss():
        out, _ = nets.refine(x, params)
        return float(np.sum(out * probe))

    out, caches = nets.refine(x, params)
    d_x, grads = nets.refine_backward(caches, params, probe)
    worst = relative_error(d_x, _fd_grad(loss, x))
    for name, g in grads.items():
        worst = max(worst, relative_error(g, _fd_grad(loss, params.get_tensor(name))))
    return worst


def check_projection(seed: int, shape=(4, 4, 8)) -> float:
    rng = np.random.default_rng(seed)
    params = _rand_params(rng, channels=shape[2])
    x = rng.normal(size=shape)
    probe = rng.normal(size=shape)

    def loss():
        out, _ = nets.project_channels(x, params)
        return float(np.sum(out * probe))

    _, cache = nets.project_channels(x, params)
    d_x, grads = nets.project_channels_backward(cache, params, probe)
    worst = relative_error(d_x, _fd_grad(loss, x))
    for name, g in grads.items():
        worst = max(worst, relative_error(g, _fd_grad(loss, params.get_tensor(name))))
    return worst


def check_naive_fuse(seed: int, shape=(4, 4, 8)) -> float:
    rng = np.random.default_rng(seed)
    params = _rand_params(rng, channels=shape[2])
    f = rng.normal(size=shape)
    g = rng.normal(size=shape)
    probe = rng.normal(size=shape)

    def loss():
        out, _ = nets.naive_fuse(f, g, params)
        return float(np.sum(out * probe))

    _, cache = nets.naive_fuse(f, g, params)
    d_f, d_g, grads = nets.naive_fuse_backward(cache, params, probe)
    worst = max(relative_error(d_f, _fd_grad(loss, f)),
                relative_error(d_g, _fd_grad(loss, g)))
    for name, grad in grads.items():
        worst = max(worst,
                    relative_error(grad, _fd_grad(loss, params.get_tensor(name))))
    return worst


def check_adaptive_fuse(seed: int, shape=(4, 4, 8), n_heads=2) -> float:
    rng = np.random.default_rng(seed)
    params = _rand_params(rng, channels=shape[2], n_heads=n_heads)
    f = rng.normal(size=shape)
    g = rng.normal(size=shape)
    probe_out = rng.normal(size=shape)
    probe_gate = rng.normal(size=shape[:-1] + (1,))

    def loss():
        out, gate, _ = nets.adaptive_fuse(f, g, params)
        return float(np.sum(out * probe_out) + np.sum(gate * probe_gate))

    _, _, cache = nets.adaptive_fuse(f, g, params)
    d_f, d_g, grads = nets.adaptive_fuse_backward(cache, probe_out, probe_gate)
    worst = max(relative_error(d_f, _fd_grad(loss, f)),
                relative_error(d_g, _fd_grad(loss, g)))
    for name, grad in grads.items():
        worst = max(worst,
                    relative_error(grad, _fd_grad(loss, params.get_tensor(name))))
    return worst


CHECKS = {
    "feature_loss": check_feature_loss,
    "refine": check_refine,
    "projection": check_projection,
    "naive_fuse": check_naive_fuse,
    "adaptive_fuse": check_adaptive_fuse,
}


def run_all(trials: int = 20, base_seed: int = 0) -> dict[str, float]:
    """Max relative error per op across ``trials`` seeded instances."""
    results = {}
    for name, fn in CHECKS.items():
        worst = 0.0
        for t in range(trials):
            worst = max(worst, fn(base_seed + 1000 * t))
        results[name] = worst
    return results

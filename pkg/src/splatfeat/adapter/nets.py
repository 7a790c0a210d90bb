"""Forward and analytic-backward passes for the adaptation heads.

Everything here operates on plain float64 arrays. Ops follow one calling
convention: ``op(inputs..., params) -> (outputs..., cache)`` and
``op_backward(cache, d_outputs...) -> (d_inputs..., grads)`` where ``grads``
maps parameter tensor names (as in ``FusionParams.tensor_items``) to arrays.
Gradients are exercised against central finite differences in the test
suite, so keep forward expressions and caches in sync when editing.
"""

from __future__ import annotations

import numpy as np

from ..scene import ValidationError
from .params import FusionParams

_NORM_EPS = 1e-5


def _as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


# --------------------------------------------------------------------------
# 3x3 convolution (zero padding, stride 1)
# --------------------------------------------------------------------------

def conv3x3(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    h, wd, _ = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros((h, wd, w.shape[0]))
    for di in range(3):
        for dj in range(3):
            out += xp[di:di + h, dj:dj + wd, :] @ w[:, :, di, dj].T
    return out


def conv3x3_backward(x: np.ndarray, w: np.ndarray, d_out: np.ndarray):
    h, wd, _ = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    d_xp = np.zeros_like(xp)
    d_w = np.zeros_like(w)
    for di in range(3):
        for dj in range(3):
            patch = xp[di:di + h, dj:dj + wd, :]
            d_w[:, :, di, dj] = np.einsum("hwo,hwc->oc", d_out, patch)
            d_xp[di:di + h, dj:dj + wd, :] += d_out @ w[:, :, di, dj]
    return d_xp[1:h + 1, 1:wd + 1, :], d_w


def _instance_norm(y: np.ndarray):
    mean = y.mean(axis=(0, 1), keepdims=True)
    var = y.var(axis=(0, 1), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _NORM_EPS)
    return (y - mean) * inv_std, inv_std


def _instance_norm_backward(y_hat, inv_std, d_yhat):
    mean_d = d_yhat.mean(axis=(0, 1), keepdims=True)
    mean_dy = (d_yhat * y_hat).mean(axis=(0, 1), keepdims=True)
    return inv_std * (d_yhat - mean_d - y_hat * mean_dy)


# --------------------------------------------------------------------------
# RefineNet: residual stack of (conv3x3 -> per-channel norm -> tanh)
# --------------------------------------------------------------------------

def refine(x: np.ndarray, params: FusionParams):
    """Channel-preserving residual refinement of one (H, W, C) grid.

    All-zero block weights make each block an exact identity.
    """
    x = _as_f64(x)
    if x.ndim != 3 or x.shape[2] != params.channels:
        raise ValidationError(
            f"refine: expected (H, W, {params.channels}), got {x.shape}")
    caches = []
    cur = x
    for blk in params.refine_blocks:
        y = conv3x3(cur, blk.conv_w)
        y_hat, inv_std = _instance_norm(y)
        z = y_hat * blk.gamma + blk.beta
        a = np.tanh(z)
        caches.append((cur, y_hat, inv_std, a))
        cur = cur + a
    return cur, caches


def refine_backward(caches, params: FusionParams, d_out: np.ndarray):
    grads = {}
    d_cur = _as_f64(d_out).copy()
    for i in reversed(range(len(params.refine_blocks))):
        blk = params.refine_blocks[i]
        x_in, y_hat, inv_std, a = caches[i]
        d_a = d_cur
        d_z = d_a * (1.0 - a * a)
        grads[f"refine{i}.gamma"] = (d_z * y_hat).sum(axis=(0, 1))
        grads[f"refine{i}.beta"] = d_z.sum(axis=(0, 1))
        d_yhat = d_z * blk.gamma
        d_y = _instance_norm_backward(y_hat, inv_std, d_yhat)
        d_x, d_w = conv3x3_backward(x_in, blk.conv_w, d_y)
        grads[f"refine{i}.conv_w"] = d_w
        d_cur = d_cur + d_x
    return d_cur, grads


# --------------------------------------------------------------------------
# Channel projection (1x1 affine)
# --------------------------------------------------------------------------

def project_channels(x: np.ndarray, params: FusionParams):
    x = _as_f64(x)
    out = x @ params.proj_w.T + params.proj_b
    return out, x


def project_channels_backward(cache, params: FusionParams, d_out: np.ndarray):
    x = cache
    flat_x = x.reshape(-1, x.shape[-1])
    flat_d = _as_f64(d_out).reshape(-1, d_out.shape[-1])
    grads = {"proj_w": flat_d.T @ flat_x, "proj_b": flat_d.sum(axis=0)}
    return (d_out @ params.proj_w).reshape(x.shape), grads


# --------------------------------------------------------------------------
# Naive fusion: per-pixel two-layer perceptron on [F || G]
# --------------------------------------------------------------------------

def naive_fuse(f_tar: np.ndarray, g_tilde: np.ndarray, params: FusionParams):
    f_tar = _as_f64(f_tar)
    g_tilde = _as_f64(g_tilde)
    if f_tar.shape != g_tilde.shape:
        raise ValidationError(
            f"naive_fuse: shape mismatch {f_tar.shape} vs {g_tilde.shape}")
    if f_tar.shape[-1] != params.channels:
        raise ValidationError(
            f"naive_fuse: {f_tar.shape[-1]} channels, params expect "
            f"{params.channels}")
    z = np.concatenate([f_tar, g_tilde], axis=-1)
    pre = z @ params.naive_w1.T + params.naive_b1
    h = np.tanh(pre)
    out = h @ params.naive_w2.T + params.naive_b2
    return out, (z, h)


def naive_fuse_backward(cache, params: FusionParams, d_out: np.ndarray):
    z, h = cache
    c = params.channels
    d_out = _as_f64(d_out)
    flat_h = h.reshape(-1, c)
    flat_d = d_out.reshape(-1, c)
    grads = {"naive_w2": flat_d.T @ flat_h, "naive_b2": flat_d.sum(axis=0)}
    d_h = d_out @ params.naive_w2
    d_pre = d_h * (1.0 - h * h)
    flat_pre = d_pre.reshape(-1, c)
    grads["naive_w1"] = flat_pre.T @ z.reshape(-1, 2 * c)
    grads["naive_b1"] = flat_pre.sum(axis=0)
    d_z = d_pre @ params.naive_w1
    return d_z[..., :c], d_z[..., c:], grads


# --------------------------------------------------------------------------
# Adaptive fusion: cross-attention + tanh-gated residual correction
# --------------------------------------------------------------------------

def _split_heads(x, n_heads):
    t, c = x.shape
    return x.reshape(t, n_heads, c // n_heads).transpose(1, 0, 2)


def _merge_heads(x):
    nh, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, nh * dh)


def adaptive_fuse(f_tar: np.ndarray, g_tilde: np.ndarray, params: FusionParams):
    """One view's fusion: tokens attend from diffusion features to geometry
    features; a per-pixel tanh gate scales the residual correction.

    Inputs are (H, W, C) or (T, C); outputs match, plus the gate map.
    """
    f_tar = _as_f64(f_tar)
    g_tilde = _as_f64(g_tilde)
    spatial = f_tar.shape[:-1]
    c = params.channels
    if f_tar.shape[-1] != c or g_tilde.shape[-1] != c:
        raise ValidationError("adaptive_fuse: channel mismatch with params")
    f = f_tar.reshape(-1, c)
    g = g_tilde.reshape(-1, c)
    if f.shape[0] != g.shape[0]:
        raise ValidationError(
            f"adaptive_fuse: token counts differ ({f.shape[0]} queries vs "
            f"{g.shape[0]} keys) for one view")

    nh = params.n_heads
    dh = c // nh
    q = f @ params.wq.T + params.bq
    k = g @ params.wk.T
    v = g @ params.wv.T + params.bv
    qh = _split_heads(q, nh)
    kh = _split_heads(k, nh)
    vh = _split_heads(v, nh)
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(dh)
    scores -= scores.max(axis=2, keepdims=True)
    expd = np.exp(scores)
    attn = expd / expd.sum(axis=2, keepdims=True)
    oh = attn @ vh
    o = _merge_heads(oh)
    f_att = o @ params.wo.T + params.bo

    zc = np.concatenate([f, f_att], axis=1)
    pre = zc @ params.gate_w1.T + params.gate_b1
    hg = np.tanh(pre)
    u = hg @ params.gate_w2.T + params.gate_b2
    gate = np.tanh(u)  # (T, 1) or (T, C)

    out = f + gate * f_att
    cache = (spatial, f, g, qh, kh, vh, attn, o, f_att, hg, gate, params)
    gate_shape = spatial + (gate.shape[1],)
    return out.reshape(spatial + (c,)), gate.reshape(gate_shape), cache


def adaptive_fuse_backward(cache, d_out: np.ndarray, d_gate: np.ndarray | None = None):
    (spatial, f, g, qh, kh, vh, attn, o, f_att, hg, gate, params) = cache
    c = params.channels
    nh = params.n_heads
    dh = c // nh
    d_out = _as_f64(d_out).reshape(-1, c)

    d_f = d_out.copy()
    d_gate_total = (d_out * f_att).sum(axis=1, keepdims=True) \
        if gate.shape[1] == 1 else d_out * f_att
    if d_gate is not None:
        d_gate_total = d_gate_total + _as_f64(d_gate).reshape(gate.shape)
    d_f_att = d_out * gate

    # Gate head.
    d_u = d_gate_total * (1.0 - gate * gate)
    grads = {"gate_w2": d_u.T @ hg, "gate_b2": d_u.sum(axis=0)}
    d_hg = d_u @ params.gate_w2
    d_pre = d_hg * (1.0 - hg * hg)
    zc = np.concatenate([f, f_att], axis=1)
    grads["gate_w1"] = d_pre.T @ zc
    grads["gate_b1"] = d_pre.sum(axis=0)
    d_zc = d_pre @ params.gate_w1
    d_f += d_zc[:, :c]
    d_f_att = d_f_att + d_zc[:, c:]

    # Output projection.
    grads["wo"] = d_f_att.T @ o
    grads["bo"] = d_f_att.sum(axis=0)
    d_o = d_f_att @ params.wo
    d_oh = _split_heads(d_o, nh)

    # Attention core.
    d_attn = d_oh @ vh.transpose(0, 2, 1)
    d_vh = attn.transpose(0, 2, 1) @ d_oh
    row = (d_attn * attn).sum(axis=2, keepdims=True)
    d_scores = attn * (d_attn - row) / np.sqrt(dh)
    d_qh = d_scores @ kh
    d_kh = d_scores.transpose(0, 2, 1) @ qh

    d_q = _merge_heads(d_qh)
    d_k = _merge_heads(d_kh)
    d_v = _merge_heads(d_vh)
    grads["wq"] = d_q.T @ f
    grads["bq"] = d_q.sum(axis=0)
    grads["wk"] = d_k.T @ g
    grads["wv"] = d_v.T @ g
    grads["bv"] = d_v.sum(axis=0)
    d_f += d_q @ params.wq
    d_g = d_k @ params.wk + d_v @ params.wv

    out_shape = spatial + (c,)
    return d_f.reshape(out_shape), d_g.reshape(out_shape), grads


# --------------------------------------------------------------------------
# Feature consistency loss
# --------------------------------------------------------------------------

def feature_loss(refined: np.ndarray, target: np.ndarray,
                 eps: float = 1e-12):
    """RMS over all (view, pixel) of (1 - cosine similarity).

    ``refined`` and ``target`` are (..., C) stacks with matching shapes; the
    target is a constant. Pixels where either vector has (near-)zero norm
    contribute the orthogonal convention value 1 with zero gradient; the
    count of such pixels is reported. Returns (loss, d_loss/d_refined,
    zero_norm_count).
    """
    refined = _as_f64(refined)
    target = _as_f64(target)
    if refined.shape != target.shape:
        raise ValidationError(
            f"feature_loss: shape mismatch {refined.shape} vs {target.shape}")
    c = refined.shape[-1]
    g = refined.reshape(-1, c)
    t = target.reshape(-1, c)
    m = g.shape[0]

    ng = np.linalg.norm(g, axis=1)
    nt = np.linalg.norm(t, axis=1)
    valid = (ng > eps) & (nt > eps)
    zero_count = int(m - valid.sum())

    r = np.ones(m)
    cos = np.zeros(m)
    denom = np.where(valid, ng * nt, 1.0)
    cos[valid] = (g[valid] * t[valid]).sum(axis=1) / denom[valid]
    r[valid] = 1.0 - cos[valid]

    loss = float(np.sqrt(np.mean(r * r)))
    grad = np.zeros_like(g)
    if loss > 0.0:
        # dL/dg_p = (r_p / (L m)) * (-dcos/dg_p)
        scale = r[valid] / (loss * m)
        dcos = (t[valid] / denom[valid, None]
                - cos[valid, None] * g[valid] / (ng[valid, None] ** 2))
        grad[valid] = -scale[:, None] * dcos
    return loss, grad.reshape(refined.shape), zero_count

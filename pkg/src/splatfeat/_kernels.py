"""Numba kernels for tiled compositing, feature accumulation, and lifting.

All kernels are single-purpose and write only to caller-provided buffers so
tile-level parallelism stays deterministic: each tile owns a disjoint output
region and results are merged in ascending tile index.
"""

from __future__ import annotations

import numpy as np
from numba import njit

K_MAX = 255


@njit(cache=True, nogil=True)
def tile_composite(x0, y0, tw, th, cand, mean2d, inv_a, inv_b, inv_c,
                   opacity, qmax, alpha_min, alpha_max, t_min, k_max,
                   counts, alpha_sum, ids_buf, w_buf, a_buf, dom_id, dom_w):
    """Front-to-back compositing for one tile.

    ``cand`` holds candidate Gaussian indices in global depth order. The
    ``qmax`` prefilter skips only Gaussians whose opacity-scaled density is
    strictly below ``alpha_min`` (it carries a safety margin), so results are
    identical to evaluating every candidate.
    """
    for py in range(th):
        ycen = y0 + py + 0.5
        for px in range(tw):
            xcen = x0 + px + 0.5
            lp = py * tw + px
            T = 1.0
            cnt = 0
            asum = 0.0
            best_w = 0.0
            best_id = -1
            for k in range(cand.shape[0]):
                g = cand[k]
                dx = xcen - mean2d[g, 0]
                dy = ycen - mean2d[g, 1]
                q = inv_a[g] * dx * dx + 2.0 * inv_b[g] * dx * dy + inv_c[g] * dy * dy
                if q > qmax[g]:
                    continue
                alpha = opacity[g] * np.exp(-0.5 * q)
                if alpha > alpha_max:
                    alpha = alpha_max
                if alpha < alpha_min:
                    continue
                test_t = T * (1.0 - alpha)
                if test_t < t_min:
                    break
                w = alpha * T
                ids_buf[lp, cnt] = g
                w_buf[lp, cnt] = w
                a_buf[lp, cnt] = alpha
                asum += w
                if w > best_w:
                    best_w = w
                    best_id = g
                cnt += 1
                T = test_t
                if cnt == k_max:
                    break
            counts[lp] = cnt
            alpha_sum[lp] = asum
            dom_id[lp] = best_id
            dom_w[lp] = best_w


@njit(cache=True, nogil=True)
def csr_composite(offsets, ids, weights, values, out):
    """out[p, :] = sum_k weights[k] * values[ids[k], :] over pixel p's slice."""
    npix = offsets.shape[0] - 1
    nchan = values.shape[1]
    for p in range(npix):
        for k in range(offsets[p], offsets[p + 1]):
            g = ids[k]
            w = weights[k]
            for c in range(nchan):
                out[p, c] += w * values[g, c]


@njit(cache=True, nogil=True)
def topk_select(offsets, weights, k, selected):
    """Mark each pixel's k largest-weight entries; ties keep earlier entries."""
    npix = offsets.shape[0] - 1
    for p in range(npix):
        lo = offsets[p]
        hi = offsets[p + 1]
        m = hi - lo
        if m <= k:
            for j in range(lo, hi):
                selected[j] = True
            continue
        w = np.empty(m)
        for j in range(m):
            w[j] = weights[lo + j]
        ws = np.sort(w)[::-1]
        thresh = ws[k - 1]
        greater = 0
        for j in range(m):
            if w[j] > thresh:
                greater += 1
        need_ties = k - greater
        taken = 0
        for j in range(m):
            if w[j] > thresh:
                selected[lo + j] = True
            elif w[j] == thresh and taken < need_ties:
                selected[lo + j] = True
                taken += 1


@njit(cache=True, nogil=True)
def lift_denominators(offsets, ids, weights, selected, denom):
    npix = offsets.shape[0] - 1
    for p in range(npix):
        for k in range(offsets[p], offsets[p + 1]):
            if selected[k]:
                denom[ids[k]] += weights[k]


@njit(cache=True, nogil=True)
def lift_numerators(offsets, ids, weights, selected, fmap, denom, acc):
    """acc[i, :] += (w / denom[i]) * fmap[p, :] for each selected entry."""
    npix = offsets.shape[0] - 1
    nchan = fmap.shape[1]
    for p in range(npix):
        for k in range(offsets[p], offsets[p + 1]):
            if not selected[k]:
                continue
            g = ids[k]
            coef = weights[k] / denom[g]
            for c in range(nchan):
                acc[g, c] += coef * fmap[p, c]


@njit(cache=True, nogil=True)
def zbuffer_points(px, py, z, width, height, depth):
    for i in range(px.shape[0]):
        x = px[i]
        y = py[i]
        if x < 0 or x >= width or y < 0 or y >= height:
            continue
        if z[i] < depth[y, x]:
            depth[y, x] = z[i]

"""Tiled, depth-sorted alpha compositing of Gaussian colors and features.

The geometry pass records, per pixel, the ordered (gaussian id, weight) list
actually used for compositing; color and feature rendering are then linear
maps over those records, which makes the weight-reuse guarantee (identical
ContributionMaps for color and feature passes) structural rather than
incidental.

Determinism: tiles are independent work items writing disjoint regions and
are merged in ascending tile index, so output is bitwise identical for any
worker-thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _kernels
from .scene import CameraView, FeatureMap, GaussianScene, ValidationError, quat_to_rotmat
from .sh import eval_sh_colors

K_MAX = _kernels.K_MAX


@dataclass(frozen=True)
class RasterConfig:
    """Fixed compositing constants, exposed for audits but rarely changed."""

    tile: int = 16
    near: float = 0.01
    cov_floor: float = 0.3      # pixel^2 isotropic floor added to 2D covariance
    alpha_min: float = 1.0 / 255.0
    alpha_max: float = 0.99
    t_min: float = 1e-4         # transmittance cutoff
    max_contribs: int = K_MAX
    sh_degree: int = 0          # view-dependent color only when > 0
    normalize_features: bool = False  # divide rendered features by accumulated alpha
    threads: int | None = None  # None: $SPLATFEAT_THREADS, else cpu count

    def resolve_threads(self) -> int:
        if self.threads is not None:
            return max(1, self.threads)
        env = os.environ.get("SPLATFEAT_THREADS")
        if env:
            return max(1, int(env))
        return os.cpu_count() or 1


@dataclass(frozen=True)
class ProjectedGaussians:
    """Screen-space Gaussians surviving near-plane culling, depth-sorted order
    given by ``depth_order`` (ties broken by original index)."""

    gaussian_id: np.ndarray  # (M,) original scene indices
    mean2d: np.ndarray       # (M, 2) pixels
    cov2d: np.ndarray        # (M, 2, 2) pixels^2, floor already added
    depth: np.ndarray        # (M,) camera-space z
    opacity: np.ndarray      # (M,)
    depth_order: np.ndarray  # (M,) permutation: front-to-back traversal order
    culled: int              # count removed by the near plane

    def __len__(self):
        return self.gaussian_id.shape[0]


@dataclass(frozen=True)
class ContributionMap:
    """Per-pixel front-to-back (gaussian id, weight) records in CSR layout."""

    height: int
    width: int
    offsets: np.ndarray  # (H*W + 1,) int64
    ids: np.ndarray      # (M,) int32 original gaussian ids
    weights: np.ndarray  # (M,) float64, w_i = alpha_i * prod_{j<i}(1 - alpha_j)
    alphas: np.ndarray   # (M,) float64, per-record opacity-density alpha_i
    alpha: np.ndarray    # (H, W) accumulated alpha = sum of weights

    def pixel(self, ix: int, iy: int) -> tuple[np.ndarray, np.ndarray]:
        p = iy * self.width + ix
        sl = slice(self.offsets[p], self.offsets[p + 1])
        return self.ids[sl], self.weights[sl]

    def pixel_alphas(self, ix: int, iy: int) -> np.ndarray:
        p = iy * self.width + ix
        return self.alphas[self.offsets[p]:self.offsets[p + 1]]

    @property
    def total(self) -> int:
        return int(self.offsets[-1])


@dataclass(frozen=True)
class DominantMap:
    """Most-contributing Gaussian per pixel; id -1 where no contributor."""

    ids: np.ndarray      # (H, W) int32
    weights: np.ndarray  # (H, W) float64


@dataclass(frozen=True)
class RenderResult:
    image: np.ndarray
    contributions: ContributionMap
    dominant: DominantMap
    culled: int = 0


def project(scene: GaussianScene, view: CameraView,
            config: RasterConfig = RasterConfig()) -> ProjectedGaussians:
    """Perspective-project Gaussians to screen space.

    cov2d = J W Sigma W^T J^T + cov_floor * I with J the pinhole Jacobian at
    the Gaussian center and W the world-to-camera rotation. Gaussians at
    camera depth <= near are culled silently.
    """
    n = len(scene)
    R = view.rotation
    t = view.translation
    p_cam = scene.positions @ R.T + t
    keep = p_cam[:, 2] > config.near
    ids = np.flatnonzero(keep)
    p_cam = p_cam[keep]
    m = ids.shape[0]
    if m == 0:
        e = np.empty
        return ProjectedGaussians(ids.astype(np.int64), e((0, 2)), e((0, 2, 2)),
                                  e(0), e(0), np.empty(0, np.int64), int(n))

    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    mean2d = np.stack([view.fx * x / z + view.cx, view.fy * y / z + view.cy], axis=1)

    inv_z = 1.0 / z
    J = np.zeros((m, 2, 3))
    J[:, 0, 0] = view.fx * inv_z
    J[:, 0, 2] = -view.fx * x * inv_z * inv_z
    J[:, 1, 1] = view.fy * inv_z
    J[:, 1, 2] = -view.fy * y * inv_z * inv_z

    rot = quat_to_rotmat(scene.rotations[keep])
    s = scene.scales[keep]
    # Sigma = R diag(s^2) R^T; fold scales into the rotation once.
    rs = rot * s[:, None, :]
    sigma = rs @ rs.transpose(0, 2, 1)
    M = J @ R[None]
    cov2d = M @ sigma @ M.transpose(0, 2, 1)
    cov2d[:, 0, 0] += config.cov_floor
    cov2d[:, 1, 1] += config.cov_floor

    order = np.lexsort((ids, z))
    return ProjectedGaussians(ids.astype(np.int64), mean2d, cov2d, z.copy(),
                              scene.opacities[keep].copy(), order, int(n - m))


def _screen_params(proj: ProjectedGaussians, config: RasterConfig):
    """Inverse covariances plus conservative density-cutoff extents."""
    a = proj.cov2d[:, 0, 0]
    b = proj.cov2d[:, 0, 1]
    c = proj.cov2d[:, 1, 1]
    det = a * c - b * b
    inv_a = c / det
    inv_b = -b / det
    inv_c = a / det
    with np.errstate(divide="ignore"):
        # Quadratic-form cutoff where alpha falls below alpha_min; the 1e-9
        # margin keeps the prefilter strictly conservative under fp rounding.
        qmax = 2.0 * np.log(proj.opacity / config.alpha_min) + 1e-9
    # Bounding box of the q <= qmax ellipse: half-extents sqrt(qmax * cov_ii).
    q_pos = np.maximum(qmax, 0.0)
    rx = np.sqrt(q_pos * a)
    ry = np.sqrt(q_pos * c)
    dead = qmax <= 0.0  # opacity below alpha_min everywhere
    rx[dead] = -1.0
    ry[dead] = -1.0
    return inv_a, inv_b, inv_c, qmax, rx, ry


@njit(cache=True, nogil=True)
def _counting_tile_sort(order, tx0, tx1, ty0, ty1, dead, ntx, nty):
    """Counting sort of Gaussian->tile instances.

    Emitting in global depth order makes each tile's candidate list
    front-to-back sorted without any comparison sort.
    """
    n_tiles = ntx * nty
    counts = np.zeros(n_tiles, dtype=np.int64)
    m = order.shape[0]
    for g in range(m):
        if dead[g]:
            continue
        for ty in range(ty0[g], ty1[g] + 1):
            base = ty * ntx
            for tx in range(tx0[g], tx1[g] + 1):
                counts[base + tx] += 1
    starts = np.zeros(n_tiles, dtype=np.int64)
    total = 0
    for t in range(n_tiles):
        starts[t] = total
        total += counts[t]
    cand = np.empty(total, dtype=np.int64)
    cursor = starts.copy()
    for oi in range(m):
        g = order[oi]
        if dead[g]:
            continue
        for ty in range(ty0[g], ty1[g] + 1):
            base = ty * ntx
            for tx in range(tx0[g], tx1[g] + 1):
                cand[cursor[base + tx]] = g
                cursor[base + tx] += 1
    return cand, starts, cursor


def _tile_instances(proj: ProjectedGaussians, rx, ry, width, height, tile):
    """Assign Gaussians to the tiles their cutoff ellipse box touches; return
    (ntx, nty, candidates in depth order, per-tile start/end)."""
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile

    # Pixel index ranges reached by each Gaussian (centers at ix + 0.5),
    # padded one pixel against rounding.
    mx = proj.mean2d[:, 0]
    my = proj.mean2d[:, 1]
    ix_min = np.floor(mx - rx - 0.5).astype(np.int64) - 1
    ix_max = np.ceil(mx + rx - 0.5).astype(np.int64) + 1
    iy_min = np.floor(my - ry - 0.5).astype(np.int64) - 1
    iy_max = np.ceil(my + ry - 0.5).astype(np.int64) + 1
    dead = ((rx < 0) | (ix_max < 0) | (iy_max < 0)
            | (ix_min >= width) | (iy_min >= height))
    tx0 = np.clip(ix_min // tile, 0, ntx - 1)
    tx1 = np.clip(ix_max // tile, 0, ntx - 1)
    ty0 = np.clip(iy_min // tile, 0, nty - 1)
    ty1 = np.clip(iy_max // tile, 0, nty - 1)
    cand, starts, ends = _counting_tile_sort(proj.depth_order, tx0, tx1, ty0,
                                             ty1, dead, ntx, nty)
    return ntx, nty, cand, starts, ends


@njit(cache=True, nogil=True)
def _scatter_tile(counts, local_ids, local_w, local_a, orig_ids, x0, y0, tw, th,
                  width, offsets, out_ids, out_w, out_a):
    pos = 0
    for py in range(th):
        for px in range(tw):
            lp = py * tw + px
            goff = offsets[(y0 + py) * width + (x0 + px)]
            for j in range(counts[lp]):
                out_ids[goff + j] = orig_ids[local_ids[pos]]
                out_w[goff + j] = local_w[pos]
                out_a[goff + j] = local_a[pos]
                pos += 1


def compute_contributions(scene: GaussianScene, view: CameraView,
                          config: RasterConfig = RasterConfig(),
                          proj: ProjectedGaussians | None = None,
                          ) -> tuple[ContributionMap, DominantMap, int]:
    """Run the geometry pass: per-pixel weight records plus dominant map."""
    if proj is None:
        proj = project(scene, view, config)
    width, height = view.width, view.height
    tile = config.tile
    inv_a, inv_b, inv_c, qmax, rx, ry = _screen_params(proj, config)
    ntx, nty, cand, starts, ends = _tile_instances(proj, rx, ry, width, height, tile)

    counts_g = np.zeros(height * width, dtype=np.int32)
    alpha_g = np.zeros((height, width))
    dom_id_g = np.full((height, width), -1, dtype=np.int32)
    dom_w_g = np.zeros((height, width))

    def run_tile(tidx):
        ty, tx = divmod(tidx, ntx)
        x0, y0 = tx * tile, ty * tile
        tw = min(tile, width - x0)
        th = min(tile, height - y0)
        tile_cand = cand[starts[tidx]:ends[tidx]]
        counts = np.zeros(th * tw, dtype=np.int32)
        if tile_cand.shape[0] == 0:
            return tidx, counts, np.empty(0, np.int32), np.empty(0), np.empty(0)
        alpha_sum = np.zeros(th * tw)
        ids_buf = np.empty((th * tw, config.max_contribs), dtype=np.int32)
        w_buf = np.empty((th * tw, config.max_contribs))
        a_buf = np.empty((th * tw, config.max_contribs))
        dom_id = np.full(th * tw, -1, dtype=np.int32)
        dom_w = np.zeros(th * tw)
        _kernels.tile_composite(x0, y0, tw, th, tile_cand, proj.mean2d,
                                inv_a, inv_b, inv_c, proj.opacity, qmax,
                                config.alpha_min, config.alpha_max, config.t_min,
                                config.max_contribs, counts, alpha_sum, ids_buf,
                                w_buf, a_buf, dom_id, dom_w)
        mask = np.arange(config.max_contribs)[None, :] < counts[:, None]
        alpha_g[y0:y0 + th, x0:x0 + tw] = alpha_sum.reshape(th, tw)
        dom_id_g[y0:y0 + th, x0:x0 + tw] = dom_id.reshape(th, tw)
        dom_w_g[y0:y0 + th, x0:x0 + tw] = dom_w.reshape(th, tw)
        return tidx, counts, ids_buf[mask], w_buf[mask], a_buf[mask]

    n_tiles = ntx * nty
    threads = config.resolve_threads()
    if threads > 1 and n_tiles > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_tile, range(n_tiles)))
    else:
        results = [run_tile(t) for t in range(n_tiles)]

    for tidx, counts, _, _, _ in results:
        ty, tx = divmod(tidx, ntx)
        x0, y0 = tx * tile, ty * tile
        tw = min(tile, width - x0)
        th = min(tile, height - y0)
        counts_g.reshape(height, width)[y0:y0 + th, x0:x0 + tw] = counts.reshape(th, tw)

    offsets = np.zeros(height * width + 1, dtype=np.int64)
    np.cumsum(counts_g, out=offsets[1:])
    out_ids = np.empty(int(offsets[-1]), dtype=np.int32)
    out_w = np.empty(int(offsets[-1]))
    out_a = np.empty(int(offsets[-1]))
    orig_ids = proj.gaussian_id.astype(np.int32)
    for tidx, counts, local_ids, local_w, local_a in results:
        if local_ids.shape[0] == 0:
            continue
        ty, tx = divmod(tidx, ntx)
        x0, y0 = tx * tile, ty * tile
        tw = min(tile, width - x0)
        th = min(tile, height - y0)
        _scatter_tile(counts, local_ids, local_w, local_a, orig_ids, x0, y0,
                      tw, th, width, offsets, out_ids, out_w, out_a)

    contrib = ContributionMap(height, width, offsets, out_ids, out_w, out_a, alpha_g)
    dominant = DominantMap(dom_id_g_remap(dom_id_g, orig_ids), dom_w_g)
    return contrib, dominant, proj.culled


def dom_id_g_remap(dom_id: np.ndarray, orig_ids: np.ndarray) -> np.ndarray:
    out = np.full(dom_id.shape, -1, dtype=np.int32)
    hit = dom_id >= 0
    out[hit] = orig_ids[dom_id[hit]]
    return out


def composite_values(contrib: ContributionMap, values: np.ndarray) -> np.ndarray:
    """Linear compositing of arbitrary per-Gaussian vectors over the records."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    out = np.zeros((contrib.height * contrib.width, values.shape[1]))
    _kernels.csr_composite(contrib.offsets, contrib.ids, contrib.weights, values, out)
    return out.reshape(contrib.height, contrib.width, values.shape[1])


def rasterize_color(scene: GaussianScene, view: CameraView,
                    config: RasterConfig = RasterConfig()) -> RenderResult:
    proj = project(scene, view, config)
    contrib, dominant, culled = compute_contributions(scene, view, config, proj)
    if config.sh_degree > 0:
        dirs = scene.positions - view.center
        nrm = np.linalg.norm(dirs, axis=1, keepdims=True)
        nrm[nrm == 0] = 1.0
        colors = eval_sh_colors(scene.sh, dirs / nrm, config.sh_degree)
    else:
        colors = eval_sh_colors(scene.sh, None, 0)
    image = composite_values(contrib, colors)
    return RenderResult(image, contrib, dominant, culled)


def rasterize_features(scene: GaussianScene, view: CameraView,
                       config: RasterConfig = RasterConfig()) -> RenderResult:
    """Composite per-Gaussian feature vectors; weights match rasterize_color
    on the same geometry bitwise (both read the same geometry pass)."""
    if scene.features is None:
        raise ValidationError("rasterize_features: scene has no per-Gaussian features")
    proj = project(scene, view, config)
    contrib, dominant, culled = compute_contributions(scene, view, config, proj)
    fmap = composite_values(contrib, scene.features)
    if config.normalize_features:
        denom = np.maximum(contrib.alpha, 1e-12)[:, :, None]
        fmap = fmap / denom
    return RenderResult(fmap, contrib, dominant, culled)


def render_depth_points(points: np.ndarray, view: CameraView) -> np.ndarray:
    """Z-buffer the nearest point per pixel; empty pixels carry +inf."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    depth = np.full((view.height, view.width), np.inf)
    if points.shape[0] == 0:
        return depth
    p_cam = points @ view.rotation.T + view.translation
    z = p_cam[:, 2]
    front = z > 0
    p_cam = p_cam[front]
    z = z[front]
    px = np.floor(view.fx * p_cam[:, 0] / z + view.cx).astype(np.int64)
    py = np.floor(view.fy * p_cam[:, 1] / z + view.cy).astype(np.int64)
    _kernels.zbuffer_points(px, py, z, view.width, view.height, depth)
    return depth

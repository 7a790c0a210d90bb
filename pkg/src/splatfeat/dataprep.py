"""View selection for training-pair generation and voxel-based pruning.

The selection pipeline builds a pose-distance graph over all frames, samples
anchor frames by degree, picks spatially diverse input views per anchor via
K-means medoids, splits the remaining neighborhood into easy/hard targets by
embedding distance, and filters targets by frustum overlap. Defaults follow
the shipped training recipe: 21 views per group, 3 anchor groups per scene,
input counts from {1, 3, 6, 9, 12}, a 0.60 easy fraction, and a frustum IoU
threshold of 0.4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .scene import CameraView, ValidationError

GROUP_SIZE = 21
ANCHOR_GROUPS = 3
INPUT_COUNTS = (1, 3, 6, 9, 12)
EASY_FRACTION = 0.60
IOU_THRESHOLD = 0.40


@dataclass(frozen=True)
class PoseGraph:
    distances: np.ndarray   # (F, F) symmetric, zero diagonal
    delta: float            # connection threshold
    adjacency: np.ndarray   # (F, F) bool, d < delta off-diagonal

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])


@dataclass(frozen=True)
class ViewGroup:
    anchor: int
    input_views: tuple[int, ...]
    easy_targets: tuple[int, ...]
    hard_targets: tuple[int, ...]


def pose_distance(view_i: CameraView, view_j: CameraView) -> float:
    """Combined rotation/translation distance of the relative pose.

    d = sqrt(||t_ij||^2 + 2(1 - tr(R_ij)/3)) with (R_ij, t_ij) the relative
    world-to-camera transform; symmetric in its arguments.
    """
    w2c_i = view_i.world_to_cam
    w2c_j = view_j.world_to_cam
    R = w2c_i[:3, :3] @ w2c_j[:3, :3].T
    t = w2c_i[:3, 3] - R @ w2c_j[:3, 3]
    rot_term = 2.0 * (1.0 - np.trace(R) / 3.0)
    return float(np.sqrt(t @ t + max(rot_term, 0.0)))


def pose_distance_matrix(views: Sequence[CameraView]) -> np.ndarray:
    f = len(views)
    d = np.zeros((f, f))
    for i in range(f):
        for j in range(i + 1, f):
            d[i, j] = d[j, i] = pose_distance(views[i], views[j])
    return d


def build_graph(views: Sequence[CameraView], n_neighbors: int) -> PoseGraph:
    """Connect frames below the smallest threshold giving min degree >= N_g."""
    f = len(views)
    if f < n_neighbors + 1:
        raise ValidationError(
            f"need at least {n_neighbors + 1} frames for {n_neighbors} neighbors, "
            f"got {f}")
    d = pose_distance_matrix(views)
    off = d + np.diag(np.full(f, np.inf))
    kth = np.sort(off, axis=1)[:, n_neighbors - 1]
    delta = float(np.nextafter(kth.max(), np.inf))
    adjacency = off < delta
    return PoseGraph(d, delta, adjacency)


def sample_anchors(graph: PoseGraph, count: int, seed: int) -> list[int]:
    """Sample ``count`` distinct nodes, probability proportional to degree."""
    degrees = graph.degrees.astype(np.float64)
    f = degrees.shape[0]
    if count > f:
        raise ValidationError(f"cannot sample {count} anchors from {f} nodes")
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    weights = degrees.copy()
    for _ in range(count):
        total = weights.sum()
        if total <= 0:
            raise ValidationError(
                "not enough positive-degree nodes to sample anchors")
        idx = int(rng.choice(f, p=weights / total))
        chosen.append(idx)
        weights[idx] = 0.0
    return chosen


def _pose_embedding(views: Sequence[CameraView], indices) -> np.ndarray:
    """6-D embedding [camera center || unit viewing direction] per frame."""
    rows = []
    for i in indices:
        v = views[i]
        rows.append(np.concatenate([v.center, v.viewing_direction]))
    return np.asarray(rows)


def _kmeans_medoids(points: np.ndarray, k: int, seed: int,
                    max_iter: int = 100) -> list[int]:
    """Seeded k-means++ followed by medoid extraction (ties: lowest index)."""
    n = points.shape[0]
    if k > n:
        raise ValidationError(f"cannot pick {k} medoids from {n} points")
    if k == n:
        return list(range(n))
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total == 0:
            centroids[c:] = points[first]
            break
        nxt = int(rng.choice(n, p=d2 / total))
        centroids[c] = points[nxt]
        d2 = np.minimum(d2, np.sum((points - centroids[c]) ** 2, axis=1))

    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dist = np.sum((points[:, None, :] - centroids[None]) ** 2, axis=2)
        new_assign = dist.argmin(axis=1)
        for c in range(k):
            members = new_assign == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    medoids = []
    for c in range(k):
        dist = np.sum((points - centroids[c]) ** 2, axis=1)
        medoids.append(int(dist.argmin()))  # argmin takes the lowest index on ties
    return sorted(set(medoids)) if len(set(medoids)) == k else _dedupe_medoids(
        points, centroids, medoids)


def _dedupe_medoids(points, centroids, medoids):
    """Resolve duplicate medoids by assigning remaining nearest frames."""
    chosen: list[int] = []
    for c in range(centroids.shape[0]):
        dist = np.sum((points - centroids[c]) ** 2, axis=1)
        for idx in np.argsort(dist, kind="stable"):
            if int(idx) not in chosen:
                chosen.append(int(idx))
                break
    return sorted(chosen)


def select_inputs(views: Sequence[CameraView], frame_ids: Sequence[int],
                  count: int, seed: int) -> list[int]:
    """Pick ``count`` spatially diverse frames by 6-D k-means medoids.

    Frames are canonicalized by id before clustering, so the result is
    invariant to the order the neighborhood is supplied in.
    """
    frame_ids = sorted(frame_ids)
    if len(frame_ids) < count:
        raise ValidationError(
            f"neighborhood of {len(frame_ids)} frames cannot supply {count} inputs")
    emb = _pose_embedding(views, frame_ids)
    medoids = _kmeans_medoids(emb, count, seed)
    return sorted(frame_ids[m] for m in medoids)


EmbeddingHook = Callable[[int], np.ndarray]


def pose_embedding_hook(views: Sequence[CameraView]) -> EmbeddingHook:
    """Default stand-in for a learned image embedding: normalized pose vector."""
    def hook(frame_id: int) -> np.ndarray:
        v = views[frame_id]
        e = np.concatenate([v.center, v.viewing_direction])
        n = np.linalg.norm(e)
        return e / n if n > 0 else np.concatenate([np.zeros(5), [1.0]])
    return hook


def luma_embedding_hook(images: Sequence[np.ndarray], grid: int = 8) -> EmbeddingHook:
    """Trivial image embedding: downsampled luma, unit-normalized."""
    def hook(frame_id: int) -> np.ndarray:
        img = np.asarray(images[frame_id], dtype=np.float64)
        if img.ndim == 3:
            img = 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
        h, w = img.shape
        ys = np.linspace(0, h - 1, grid).round().astype(int)
        xs = np.linspace(0, w - 1, grid).round().astype(int)
        e = img[np.ix_(ys, xs)].reshape(-1)
        n = np.linalg.norm(e)
        return e / n if n > 0 else np.full(grid * grid, 1.0 / grid)
    return hook


def partition_targets(candidates: Sequence[int], ref_ids: Sequence[int],
                      embed: EmbeddingHook,
                      easy_fraction: float = EASY_FRACTION,
                      ) -> tuple[list[int], list[int]]:
    """Split candidates into easy/hard by min cosine distance to the inputs.

    Bottom ``easy_fraction`` by distance are easy. Ordering is stable with
    index tie-breaks, so the split is deterministic.
    """
    candidates = list(candidates)
    if not candidates:
        return [], []
    ref_emb = np.stack([embed(r) for r in ref_ids])
    scores = []
    for c in candidates:
        e = embed(c)
        cos = ref_emb @ e
        scores.append(float((1.0 - cos).min()))
    order = sorted(range(len(candidates)), key=lambda j: (scores[j], candidates[j]))
    n_easy = int(math.floor(easy_fraction * len(candidates)))
    if easy_fraction >= 1.0:
        n_easy = len(candidates)
    easy = sorted(candidates[j] for j in order[:n_easy])
    hard = sorted(candidates[j] for j in order[n_easy:])
    return easy, hard


def _frustum_geometry(view: CameraView, near: float, far: float):
    x_lo = (0.0 - view.cx) / view.fx
    x_hi = (view.width - view.cx) / view.fx
    y_lo = (0.0 - view.cy) / view.fy
    y_hi = (view.height - view.cy) / view.fy
    volume = (x_hi - x_lo) * (y_hi - y_lo) * (far ** 3 - near ** 3) / 3.0
    return x_lo, x_hi, y_lo, y_hi, volume


def _sample_frustum(view: CameraView, near: float, far: float, count: int, rng):
    x_lo, x_hi, y_lo, y_hi, _ = _frustum_geometry(view, near, far)
    u = rng.random(count)
    z = np.cbrt(near ** 3 + u * (far ** 3 - near ** 3))
    sx = rng.uniform(x_lo, x_hi, count)
    sy = rng.uniform(y_lo, y_hi, count)
    p_cam = np.stack([sx * z, sy * z, z], axis=1)
    return (p_cam - view.translation) @ view.rotation


def _in_frustum(points_world: np.ndarray, view: CameraView, near: float,
                far: float) -> np.ndarray:
    p = points_world @ view.rotation.T + view.translation
    z = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = view.fx * p[:, 0] / z + view.cx
        py = view.fy * p[:, 1] / z + view.cy
    return ((z >= near) & (z <= far)
            & (px >= 0) & (px <= view.width)
            & (py >= 0) & (py <= view.height))


def frustum_iou(view_a: CameraView, view_b: CameraView,
                depth_range: tuple[float, float] = (0.1, 10.0),
                sample_count: int = 20000, seed: int = 0) -> float:
    """Monte-Carlo volume IoU of two camera frusta over a depth range."""
    near, far = depth_range
    if not (0 < near < far):
        raise ValidationError(f"degenerate depth range ({near}, {far})")
    rng = np.random.default_rng(seed)
    *_, vol_a = _frustum_geometry(view_a, near, far)
    *_, vol_b = _frustum_geometry(view_b, near, far)
    pts_a = _sample_frustum(view_a, near, far, sample_count, rng)
    pts_b = _sample_frustum(view_b, near, far, sample_count, rng)
    frac_ab = _in_frustum(pts_a, view_b, near, far).mean()
    frac_ba = _in_frustum(pts_b, view_a, near, far).mean()
    inter = 0.5 * (frac_ab * vol_a + frac_ba * vol_b)
    union = vol_a + vol_b - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def prep_view_groups(views: Sequence[CameraView],
                     input_count: int,
                     embed: EmbeddingHook | None = None,
                     anchor_count: int = ANCHOR_GROUPS,
                     group_size: int = GROUP_SIZE,
                     easy_fraction: float = EASY_FRACTION,
                     iou_threshold: float = IOU_THRESHOLD,
                     depth_range: tuple[float, float] = (0.1, 10.0),
                     iou_samples: int = 20000,
                     hard_count: int | None = None,
                     seed: int = 0) -> list[ViewGroup]:
    """Full view-selection pipeline producing (input, target) groups."""
    if input_count < 1:
        raise ValidationError("input_count must be >= 1")
    n_neighbors = group_size - 1
    graph = build_graph(views, n_neighbors)
    anchors = sample_anchors(graph, anchor_count, seed)
    if embed is None:
        embed = pose_embedding_hook(views)

    groups = []
    for gi, anchor in enumerate(anchors):
        # Anchor neighborhood, truncated to the group size by distance.
        neigh = graph.neighbors(anchor)
        dists = graph.distances[anchor, neigh]
        order = np.argsort(dists, kind="stable")
        pool = [anchor] + [int(neigh[j]) for j in order[:n_neighbors]]
        refs = select_inputs(views, pool, input_count, seed=seed + 101 * gi)
        remaining = [f for f in pool if f not in refs]
        easy, hard = partition_targets(remaining, refs, embed, easy_fraction)

        q_total = len(remaining)
        n_easy_target = min(len(easy), (q_total + 1) // 2)
        n_hard_target = hard_count if hard_count is not None else n_easy_target
        n_hard_target = min(n_hard_target, len(hard))

        easy_sel = easy
        if n_easy_target < len(easy):
            emb = _pose_embedding(views, easy)
            medoids = _kmeans_medoids(emb, n_easy_target, seed + 211 * gi)
            easy_sel = sorted(easy[m] for m in medoids)
        rng = np.random.default_rng(seed + 307 * gi)
        if n_hard_target < len(hard):
            pick = rng.choice(len(hard), size=n_hard_target, replace=False)
            hard_sel = sorted(hard[int(j)] for j in pick)
        else:
            hard_sel = hard

        def overlaps(frame):
            return max(
                frustum_iou(views[frame], views[r], depth_range, iou_samples,
                            seed=seed + 13) for r in refs) >= iou_threshold

        easy_sel = [f for f in easy_sel if overlaps(f)]
        hard_sel = [f for f in hard_sel if overlaps(f)]
        groups.append(ViewGroup(anchor, tuple(refs), tuple(easy_sel),
                                tuple(hard_sel)))
    return groups


def voxel_prune(scene, voxel_size: float):
    """Keep the highest-opacity Gaussian per occupied voxel.

    Ties break toward the lowest index; surviving Gaussians keep their
    original order and attributes (features included). Returns
    (pruned_scene, prune_rate).
    """
    from .scene import GaussianScene

    if voxel_size <= 0:
        raise ValidationError("voxel_size must be positive")
    n = len(scene)
    if n == 0:
        return scene, 0.0
    cells = np.floor(scene.positions / voxel_size).astype(np.int64)
    # Group rows by voxel; within a voxel order by opacity desc then index.
    order = np.lexsort((np.arange(n), -scene.opacities,
                        cells[:, 2], cells[:, 1], cells[:, 0]))
    sorted_cells = cells[order]
    first = np.ones(n, dtype=bool)
    first[1:] = (sorted_cells[1:] != sorted_cells[:-1]).any(axis=1)
    kept = np.sort(order[first])
    pruned = GaussianScene(
        scene.positions[kept], scene.rotations[kept], scene.scales[kept],
        scene.opacities[kept], scene.sh[kept],
        None if scene.features is None else scene.features[kept],
        scene.bbox_pad)
    return pruned, 1.0 - kept.shape[0] / n

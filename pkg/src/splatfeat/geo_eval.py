"""Geometric fidelity metrics: trajectory scale alignment, pose errors,
Chamfer distance, co-visibility masks, and region-split PSNR/SSIM.

Trajectory protocol (fixed here because absolute numbers depend on it):
camera centers are re-expressed in each trajectory's first-camera frame,
the predicted centers are scale-aligned by the closed-form least squares
factor, and rotations are compared per frame by geodesic angle. No
rotational Procrustes is applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d
from scipy.spatial import cKDTree

from .scene import CameraView, ValidationError


@dataclass(frozen=True)
class Trajectory:
    """Ordered camera centers and world-frame orientations."""

    centers: np.ndarray    # (F, 3)
    rotations: np.ndarray  # (F, 3, 3) world-to-camera rotation blocks

    def __post_init__(self):
        if self.centers.ndim != 2 or self.centers.shape[1] != 3:
            raise ValidationError("trajectory centers must be (F, 3)")
        if self.rotations.shape != (self.centers.shape[0], 3, 3):
            raise ValidationError("trajectory rotations must be (F, 3, 3)")
        if self.centers.shape[0] == 0:
            raise ValidationError("trajectory must be nonempty")

    def __len__(self):
        return self.centers.shape[0]

    @classmethod
    def from_views(cls, views: list[CameraView]) -> "Trajectory":
        centers = np.stack([v.center for v in views])
        rotations = np.stack([v.rotation for v in views])
        return cls(centers, rotations)


@dataclass(frozen=True)
class PoseError:
    t_err_cm: float
    r_err_deg: float


def align_scale(gt: Trajectory | np.ndarray, pred: Trajectory | np.ndarray) -> float:
    """Least-squares scale s* = argmin_s ||C_gt - s C_pred||^2, closed form."""
    c_gt = gt.centers if isinstance(gt, Trajectory) else np.asarray(gt, dtype=np.float64)
    c_pred = pred.centers if isinstance(pred, Trajectory) else np.asarray(pred, dtype=np.float64)
    if c_gt.shape != c_pred.shape:
        raise ValidationError(
            f"trajectory lengths differ: {c_gt.shape[0]} vs {c_pred.shape[0]}")
    denom = float(np.sum(c_pred * c_pred))
    if denom == 0.0:
        raise ValidationError("cannot align scale against an all-zero trajectory")
    return float(np.sum(c_gt * c_pred)) / denom


def _relative_centers(traj: Trajectory) -> np.ndarray:
    return (traj.centers - traj.centers[0]) @ traj.rotations[0].T


def pose_error(gt: Trajectory, pred: Trajectory,
               scene_scale: float = 1.0) -> PoseError:
    """Per-frame mean translation (cm) and rotation (deg) errors.

    ``scene_scale`` converts scene units to meters. The predicted centers
    are scale-aligned to ground truth before comparison, so a uniform scale
    on the prediction does not affect T_err.
    """
    if len(gt) != len(pred):
        raise ValidationError(
            f"trajectory lengths differ: {len(gt)} vs {len(pred)}")
    c_gt = _relative_centers(gt)
    c_pred = _relative_centers(pred)
    if np.any(c_pred):
        s = align_scale(c_gt, c_pred)
    else:
        s = 1.0
    diff = np.linalg.norm(c_gt - s * c_pred, axis=1)
    t_err_cm = float(diff.mean()) * scene_scale * 100.0

    rel = np.einsum("fij,fik->fjk", gt.rotations, pred.rotations)
    traces = np.einsum("fii->f", rel)
    cos = np.clip((traces - 1.0) / 2.0, -1.0, 1.0)
    r_err_deg = float(np.degrees(np.arccos(cos)).mean())
    return PoseError(t_err_cm, r_err_deg)


def chamfer(points_a: np.ndarray, points_b: np.ndarray) -> float:
    """Symmetric squared Chamfer distance between point sets.

    CD = mean_a min_b ||a - b||^2 + mean_b min_a ||b - a||^2, k-d tree
    accelerated.
    """
    a = np.asarray(points_a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(points_b, dtype=np.float64).reshape(-1, 3)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValidationError("chamfer distance requires nonempty point sets")
    d_ab, _ = cKDTree(b).query(a, k=1)
    d_ba, _ = cKDTree(a).query(b, k=1)
    return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def covis_mask(ref_points: np.ndarray, novel_view: CameraView,
               novel_depth: np.ndarray, tol: float = 0.05) -> np.ndarray:
    """Pixels of the novel view reached by reference geometry.

    A pixel is co-visible iff some reference point projects into it with
    |z_point - depth| <= tol * depth. Pixels with undefined (non-finite)
    depth are never co-visible.
    """
    mask = np.zeros((novel_view.height, novel_view.width), dtype=bool)
    pts = np.asarray(ref_points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return mask
    p_cam = pts @ novel_view.rotation.T + novel_view.translation
    z = p_cam[:, 2]
    front = z > 0
    p_cam, z = p_cam[front], z[front]
    px = np.floor(novel_view.fx * p_cam[:, 0] / z + novel_view.cx).astype(np.int64)
    py = np.floor(novel_view.fy * p_cam[:, 1] / z + novel_view.cy).astype(np.int64)
    inside = (px >= 0) & (px < novel_view.width) & (py >= 0) & (py < novel_view.height)
    px, py, z = px[inside], py[inside], z[inside]
    depth = novel_depth[py, px]
    ok = np.isfinite(depth) & (np.abs(z - depth) <= tol * depth)
    mask[py[ok], px[ok]] = True
    return mask


_PSNR_CAP_DB = 99.0


def psnr(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> float:
    """PSNR with peak 1.0 over masked pixels; identical inputs cap at 99 dB."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValidationError(f"image shapes differ: {pred.shape} vs {gt.shape}")
    err = (pred - gt) ** 2
    if mask is not None:
        if not mask.any():
            raise ValidationError("PSNR over an empty mask region is undefined")
        err = err[mask]
    mse = float(err.mean())
    if mse == 0.0:
        return _PSNR_CAP_DB
    return min(float(10.0 * np.log10(1.0 / mse)), _PSNR_CAP_DB)


def _rec601_luma(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image.astype(np.float64)
    return (0.299 * image[..., 0] + 0.587 * image[..., 1]
            + 0.114 * image[..., 2]).astype(np.float64)


def _gaussian_window_filter(img: np.ndarray, sigma: float = 1.5,
                            radius: int = 5) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    out = correlate1d(img, k, axis=0, mode="reflect")
    return correlate1d(out, k, axis=1, mode="reflect")


def ssim(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean SSIM on Rec. 601 luma, 11x11 Gaussian window, standard constants."""
    x = _rec601_luma(np.asarray(pred, dtype=np.float64))
    y = _rec601_luma(np.asarray(gt, dtype=np.float64))
    if x.shape != y.shape:
        raise ValidationError(f"image shapes differ: {x.shape} vs {y.shape}")
    c1 = (0.01 * 1.0) ** 2
    c2 = (0.03 * 1.0) ** 2
    mu_x = _gaussian_window_filter(x)
    mu_y = _gaussian_window_filter(y)
    var_x = _gaussian_window_filter(x * x) - mu_x ** 2
    var_y = _gaussian_window_filter(y * y) - mu_y ** 2
    cov = _gaussian_window_filter(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    smap = num / den
    if mask is not None:
        if not mask.any():
            raise ValidationError("SSIM over an empty mask region is undefined")
        smap = smap[mask]
    return float(smap.mean())


def masked_psnr_ssim(pred: np.ndarray, gt: np.ndarray,
                     mask: np.ndarray | None = None) -> tuple[float, float]:
    """(PSNR, SSIM) over the masked region (full frame when mask is None)."""
    return psnr(pred, gt, mask), ssim(pred, gt, mask)

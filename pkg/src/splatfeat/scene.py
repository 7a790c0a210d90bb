"""Core scene types: Gaussians, cameras, and dense feature grids.

All types are immutable by convention after construction (arrays are not
write-protected, but nothing in this package mutates them), so instances can
be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Spherical harmonics storage: degree 3 -> 16 coefficients, 3 channels each.
SH_DEGREE = 3
SH_COEFFS = (SH_DEGREE + 1) ** 2


class ValidationError(ValueError):
    """Raised when loaded or constructed data violates a type invariant."""


@dataclass(frozen=True)
class GaussianScene:
    """A set of 3D Gaussian primitives with optional per-Gaussian features.

    Attributes
    ----------
    positions : (N, 3) float64, Gaussian centers in world units.
    rotations : (N, 4) float64, unit quaternions (w, x, y, z).
    scales : (N, 3) float64, positive per-axis standard deviations.
    opacities : (N,) float64 in [0, 1].
    sh : (N, 16, 3) float64, spherical-harmonic color coefficients
        (DC first, then degree 1..3 terms).
    features : optional (N, C) float64 per-Gaussian feature matrix.
    bbox_pad : relative padding applied to the center bounding box.
    """

    positions: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    sh: np.ndarray
    features: np.ndarray | None = None
    bbox_pad: float = 0.0

    def __post_init__(self):
        n = self.positions.shape[0]
        for name, arr, shape in (
            ("positions", self.positions, (n, 3)),
            ("rotations", self.rotations, (n, 4)),
            ("scales", self.scales, (n, 3)),
            ("opacities", self.opacities, (n,)),
            ("sh", self.sh, (n, SH_COEFFS, 3)),
        ):
            if arr.shape != shape:
                raise ValidationError(f"{name}: expected shape {shape}, got {arr.shape}")
        for name, arr in (("positions", self.positions), ("rotations", self.rotations),
                          ("scales", self.scales), ("opacities", self.opacities),
                          ("sh", self.sh)):
            if arr.size and not np.isfinite(arr).all():
                idx = int(np.flatnonzero(~np.isfinite(arr).reshape(n, -1).all(axis=1))[0])
                raise ValidationError(f"{name}: non-finite value at index {idx}")
        if n:
            norms = np.linalg.norm(self.rotations, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-6):
                raise ValidationError("rotations must be unit quaternions (norm within 1e-6)")
            if not (self.scales > 0).all():
                raise ValidationError("scales must be positive componentwise")
            if self.opacities.min() < 0 or self.opacities.max() > 1:
                raise ValidationError("opacities must lie in [0, 1]")
        if self.features is not None:
            if self.features.shape[0] != n:
                raise ValidationError(
                    f"features: {self.features.shape[0]} rows for {n} Gaussians")

    def __len__(self):
        return self.positions.shape[0]

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box (min, max) of Gaussian centers.

        An empty scene yields the degenerate box at the origin. ``bbox_pad``
        expands each side by that fraction of the extent.
        """
        if len(self) == 0:
            z = np.zeros(3)
            return z, z
        lo = self.positions.min(axis=0)
        hi = self.positions.max(axis=0)
        if self.bbox_pad:
            pad = self.bbox_pad * (hi - lo)
            lo, hi = lo - pad, hi + pad
        return lo, hi

    def with_features(self, features: np.ndarray) -> "GaussianScene":
        features = np.ascontiguousarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != len(self):
            raise ValidationError(
                f"features: expected ({len(self)}, C), got {features.shape}")
        return GaussianScene(self.positions, self.rotations, self.scales,
                             self.opacities, self.sh, features, self.bbox_pad)


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera: intrinsics in pixels plus a rigid world-to-camera map."""

    view_id: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_cam: np.ndarray  # (4, 4), row [3] = (0, 0, 0, 1)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(f"camera {self.view_id}: fx, fy must be positive")
        w2c = np.asarray(self.world_to_cam, dtype=np.float64)
        if w2c.shape != (4, 4):
            raise ValidationError(f"camera {self.view_id}: world_to_cam must be 4x4")
        R = w2c[:3, :3]
        dev = np.linalg.norm(R @ R.T - np.eye(3))
        if dev > 1e-4:
            raise ValidationError(
                f"camera {self.view_id}: rotation not orthonormal "
                f"(Frobenius deviation {dev:.3e})")
        if np.linalg.det(R) < 0:
            raise ValidationError(f"camera {self.view_id}: rotation has negative determinant")
        object.__setattr__(self, "world_to_cam", w2c)

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_cam[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_cam[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, C = -R^T t."""
        return -self.rotation.T @ self.translation

    @property
    def viewing_direction(self) -> np.ndarray:
        """Unit optical-axis direction in world coordinates (camera +z)."""
        return self.rotation[2, :].copy()

    def downsampled(self, n: int) -> "CameraView":
        """Camera at 1/n resolution (latent grid); resolution must divide by n."""
        if self.width % n or self.height % n:
            raise ValidationError(
                f"camera {self.view_id}: {self.width}x{self.height} not divisible by {n}")
        return CameraView(self.view_id, self.fx / n, self.fy / n, self.cx / n,
                          self.cy / n, self.width // n, self.height // n,
                          self.world_to_cam)


@dataclass(frozen=True)
class FeatureMap:
    """Dense H x W x C feature grid tied to a view.

    ``downsample`` is the latent-to-pixel factor n: when bound to a camera,
    H * n and W * n must equal the camera's pixel resolution.
    """

    view_id: str
    data: np.ndarray  # (H, W, C)
    downsample: int = 1

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValidationError(f"feature map {self.view_id}: data must be H x W x C")
        if self.downsample < 1:
            raise ValidationError(f"feature map {self.view_id}: downsample must be >= 1")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def check_bound(self, view: CameraView):
        """Verify this map's grid matches the camera resolution via ``downsample``."""
        if (self.height * self.downsample != view.height
                or self.width * self.downsample != view.width):
            raise ValidationError(
                f"feature map {self.view_id}: {self.height}x{self.width} at factor "
                f"{self.downsample} does not cover camera {view.width}x{view.height}")

    def require_pe_compatible(self):
        if self.channels % 4 != 0:
            raise ValidationError(
                f"feature map {self.view_id}: channel count {self.channels} "
                "not divisible by 4")


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from unit quaternions (w, x, y, z); shape (N,4)->(N,3,3)."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None]
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def make_scene(positions, rotations=None, scales=None, opacities=None,
               sh_dc=None, features=None, bbox_pad: float = 0.0) -> GaussianScene:
    """Convenience constructor filling in isotropic defaults.

    ``sh_dc`` is an (N, 3) DC color block; higher-order coefficients are zero.
    """
    positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
    n = positions.shape[0]
    if rotations is None:
        rotations = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))
    else:
        rotations = np.ascontiguousarray(rotations, dtype=np.float64).reshape(n, 4)
        nrm = np.linalg.norm(rotations, axis=1, keepdims=True)
        rotations = rotations / nrm
    if scales is None:
        scales = np.full((n, 3), 0.1)
    else:
        scales = np.ascontiguousarray(scales, dtype=np.float64).reshape(n, 3)
    if opacities is None:
        opacities = np.full(n, 0.9)
    else:
        opacities = np.ascontiguousarray(opacities, dtype=np.float64).reshape(n)
    sh = np.zeros((n, SH_COEFFS, 3))
    if sh_dc is not None:
        sh[:, 0, :] = np.asarray(sh_dc, dtype=np.float64).reshape(n, 3)
    if features is not None:
        features = np.ascontiguousarray(features, dtype=np.float64)
    return GaussianScene(positions, rotations, scales, opacities, sh,
                         features, bbox_pad)

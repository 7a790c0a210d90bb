"""Array-in/array-out bridge over the splatfeat core.

Callers that invoke the adapter once per denoising timestep should build a
ContributionCache per camera set once and reuse it: rasterization geometry
depends only on the scene and cameras, not on the features being lifted or
rendered, so the cache amortizes the expensive pass.

Contracts:
- inputs must be C-contiguous with dtype float32 or float64; nothing is
  converted implicitly (f64 in -> f64 out, f32 in -> f32 out);
- shape problems raise :class:`BridgeShapeError` naming the offending axis;
- a handle is valid until :func:`release`; each handle must not be used from
  two threads at once (checked when debug mode is on).
"""

from __future__ import annotations

import os
import threading

import numpy as np

from splatfeat import CameraView, FeatureMap, LiftConfig, lift as core_lift
from splatfeat.adapter import adaptive_fuse as core_adaptive_fuse, load_params
from splatfeat.ply_io import load_ply
from splatfeat.rasterizer import (RasterConfig, composite_values,
                                  compute_contributions)


class BridgeError(RuntimeError):
    """Base class for bridge-level failures."""


class BridgeShapeError(BridgeError):
    def __init__(self, message: str, axis: int | None = None):
        super().__init__(message if axis is None
                         else f"{message} (axis {axis})")
        self.axis = axis


class BridgeDtypeError(BridgeError):
    pass


class HandleReleasedError(BridgeError):
    pass


class ConcurrentUseError(BridgeError):
    pass


_ALLOWED = (np.dtype(np.float32), np.dtype(np.float64))


def _check_array(name: str, arr, rank: int) -> np.ndarray:
    if not isinstance(arr, np.ndarray):
        raise BridgeDtypeError(f"{name}: expected a numpy array, got {type(arr)!r}")
    if arr.dtype not in _ALLOWED:
        raise BridgeDtypeError(
            f"{name}: dtype {arr.dtype} not accepted; pass float32 or float64")
    if arr.ndim != rank:
        raise BridgeShapeError(f"{name}: expected rank {rank}, got {arr.ndim}")
    if not arr.flags.c_contiguous:
        raise BridgeShapeError(f"{name}: array must be C-contiguous row-major")
    return arr


def _debug_enabled() -> bool:
    return os.environ.get("SPLATFEAT_BRIDGE_DEBUG", "") not in ("", "0")


class _Guard:
    """Single-flight guard per handle, active in debug mode."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self._lock = threading.Lock()
        self._owner = None

    def __enter__(self):
        if not self.enabled:
            return self
        with self._lock:
            if self._owner is not None:
                raise ConcurrentUseError(
                    "handle used from two threads concurrently; create one "
                    "handle per thread")
            self._owner = threading.get_ident()
        return self

    def __exit__(self, *exc):
        if self.enabled:
            with self._lock:
                self._owner = None
        return False


class BoundScene:
    """Opaque handle to a loaded Gaussian scene.

    Exposed attributes are copies; the underlying scene is never mutated
    through the bridge.
    """

    def __init__(self, scene, debug: bool | None = None):
        self._scene = scene
        self._guard = _Guard(_debug_enabled() if debug is None else debug)
        self._released = False

    def _require_live(self):
        if self._released:
            raise HandleReleasedError("scene handle has been released")

    @property
    def gaussian_count(self) -> int:
        self._require_live()
        return len(self._scene)

    @property
    def feature_dim(self) -> int | None:
        self._require_live()
        f = self._scene.features
        return None if f is None else int(f.shape[1])

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        self._require_live()
        lo, hi = self._scene.bbox
        return lo.copy(), hi.copy()

    def release(self):
        self._released = True
        self._scene = None


def load_scene(path, debug: bool | None = None) -> BoundScene:
    """Load a PLY scene (feature sidecar included when present)."""
    return BoundScene(load_ply(path), debug=debug)


def release(handle: BoundScene):
    handle.release()


def _view_from_dict(view: dict) -> CameraView:
    required = ("id", "fx", "fy", "cx", "cy", "width", "height", "world_to_cam")
    for key in required:
        if key not in view:
            raise BridgeShapeError(f"view dict missing field {key!r}")
    w2c = np.asarray(view["world_to_cam"], dtype=np.float64)
    if w2c.size != 16:
        raise BridgeShapeError("world_to_cam needs 16 row-major floats")
    return CameraView(str(view["id"]), float(view["fx"]), float(view["fy"]),
                      float(view["cx"]), float(view["cy"]),
                      int(view["width"]), int(view["height"]),
                      w2c.reshape(4, 4))


class ContributionCache:
    """Frozen rasterization geometry for a fixed (scene, cameras) pair."""

    def __init__(self, contributions, dominants, views):
        self.contributions = contributions
        self.dominants = dominants
        self.views = views

    def __len__(self):
        return len(self.contributions)


def prepare_views(handle: BoundScene, views: list[dict],
                  threads: int | None = None) -> ContributionCache:
    """Run the geometry pass once per view and freeze the records."""
    handle._require_live()
    cfg = RasterConfig(threads=threads)
    contribs, doms, cams = [], [], []
    with handle._guard:
        for v in views:
            cam = _view_from_dict(v)
            contrib, dom, _ = compute_contributions(handle._scene, cam, cfg)
            contribs.append(contrib)
            doms.append(dom)
            cams.append(cam)
    return ContributionCache(contribs, doms, cams)


def py_lift(handle: BoundScene, feature_stack: np.ndarray,
            cache: ContributionCache, top_k="all",
            normalize: bool = True) -> np.ndarray:
    """Lift a (P, H, W, C) reference stack onto the scene's Gaussians.

    Numerically identical to the CLI ``lift`` command on the same serialized
    inputs; the output dtype matches the input dtype.
    """
    handle._require_live()
    stack = _check_array("feature_stack", feature_stack, rank=4)
    if stack.shape[0] != len(cache):
        raise BridgeShapeError(
            f"feature_stack has {stack.shape[0]} views, cache has "
            f"{len(cache)}", axis=0)
    maps = []
    for i, (cm, cam) in enumerate(zip(cache.contributions, cache.views)):
        if stack.shape[1] != cm.height:
            raise BridgeShapeError(
                f"view {cam.view_id}: stack height {stack.shape[1]} vs "
                f"geometry {cm.height}", axis=1)
        if stack.shape[2] != cm.width:
            raise BridgeShapeError(
                f"view {cam.view_id}: stack width {stack.shape[2]} vs "
                f"geometry {cm.width}", axis=2)
        maps.append(FeatureMap(cam.view_id, stack[i]))
    n = handle.gaussian_count
    feat_dim = handle.feature_dim
    if feat_dim is not None and stack.shape[3] != feat_dim:
        raise BridgeShapeError(
            f"stack carries {stack.shape[3]} channels, scene features have "
            f"{feat_dim}", axis=3)
    with handle._guard:
        return core_lift(maps, cache.contributions, n,
                         LiftConfig(top_k=top_k, normalize_output=normalize))


def py_render_features(handle: BoundScene, view: dict,
                       features: np.ndarray | None = None,
                       cache: ContributionCache | None = None,
                       cache_index: int = 0,
                       threads: int | None = None):
    """Rasterize per-Gaussian features into a view.

    Returns (H, W, C) features plus the dominant-Gaussian maps
    (ids int32 (H, W), weights float64 (H, W)). ``features`` overrides the
    scene's stored features; pass a cache to skip the geometry pass.
    """
    handle._require_live()
    scene = handle._scene
    if features is None:
        if scene.features is None:
            raise BridgeError("scene has no per-Gaussian features; pass the "
                              "`features` argument")
        values = scene.features
        out_dtype = np.float64
    else:
        values = _check_array("features", features, rank=2)
        if values.shape[0] != len(scene):
            raise BridgeShapeError(
                f"features rows {values.shape[0]} vs {len(scene)} Gaussians",
                axis=0)
        out_dtype = values.dtype
    with handle._guard:
        if cache is not None:
            contrib = cache.contributions[cache_index]
            dom = cache.dominants[cache_index]
        else:
            cam = _view_from_dict(view)
            cfg = RasterConfig(threads=threads)
            contrib, dom, _ = compute_contributions(scene, cam, cfg)
        rendered = composite_values(contrib, np.asarray(values, dtype=np.float64))
    rendered = rendered.astype(out_dtype) if out_dtype == np.float32 else rendered
    return rendered, dom.ids.copy(), dom.weights.copy()


def py_adaptive_fuse(f_tar: np.ndarray, g_tilde: np.ndarray, params_path):
    """Gated cross-attention fusion of one view's token grids.

    Mirrors the adapter op exactly: returns (fused, gate) with the gate in
    [-1, 1]; with a zero gating head the fused output equals ``f_tar``
    bitwise.
    """
    f = _check_array("f_tar", f_tar, rank=3)
    g = _check_array("g_tilde", g_tilde, rank=3)
    if f.dtype != g.dtype:
        raise BridgeDtypeError(
            f"f_tar dtype {f.dtype} differs from g_tilde dtype {g.dtype}")
    for axis in range(3):
        if f.shape[axis] != g.shape[axis]:
            raise BridgeShapeError(
                f"f_tar {f.shape} vs g_tilde {g.shape}", axis=axis)
    params = load_params(params_path)
    if f.shape[2] != params.channels:
        raise BridgeShapeError(
            f"inputs carry {f.shape[2]} channels, params expect "
            f"{params.channels}", axis=2)
    fused, gate, _ = core_adaptive_fuse(np.asarray(f, dtype=np.float64),
                                        np.asarray(g, dtype=np.float64), params)
    if f.dtype == np.float32:
        return fused.astype(np.float32), gate.astype(np.float32)
    return fused, gate

"""Array-in/array-out bindings over splatfeat.

Surface: ``load_scene`` / ``release`` manage opaque scene handles,
``prepare_views`` freezes rasterization geometry into a reusable cache, and
``py_lift`` / ``py_render_features`` / ``py_adaptive_fuse`` are numerically
identical to the corresponding CLI paths on the same inputs.
"""

from .core import (BoundScene, BridgeDtypeError, BridgeError,
                   BridgeShapeError, ConcurrentUseError, ContributionCache,
                   HandleReleasedError, load_scene, prepare_views,
                   py_adaptive_fuse, py_lift, py_render_features, release)

__version__ = "0.1.0"

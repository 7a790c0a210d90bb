"""splatfeat: Gaussian-splat feature lifting, rendering, fusion, and
geometric evaluation, verifiable at desk scale on synthetic scenes."""

from .scene import (CameraView, FeatureMap, GaussianScene, ValidationError,
                    make_scene)
from .tensor_io import read_tensor, write_tensor, TensorFormatError
from .ply_io import load_ply, save_ply, PlyParseError
from .camera_io import load_cameras, save_cameras
from .rasterizer import (ContributionMap, DominantMap, ProjectedGaussians,
                         RasterConfig, RenderResult, compute_contributions,
                         project, rasterize_color, rasterize_features,
                         render_depth_points)
from .uplift import LiftConfig, attach_features, lift

__version__ = "0.1.0"

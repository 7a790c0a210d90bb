"""Feature-adaptation heads: positional encoding, refinement, fusion,
losses, multi-scale aggregation, gradient checks, and the toy trainer."""

from .params import (FusionParams, RefineBlock, identity_naive_params,
                     init_params, load_params, save_params, zero_gate_params)
from .pe import PEConfig, gs_pe, sinusoidal_encode
from .nets import (adaptive_fuse, adaptive_fuse_backward, feature_loss,
                   naive_fuse, naive_fuse_backward, project_channels,
                   project_channels_backward, refine, refine_backward)
from .multiscale import (MultiScaleConfig, MultiScaleParams, ScaleSpec,
                         bilinear_resize, identity_multiscale, init_multiscale,
                         multiscale_aggregate, multiscale_scatter)
from .gradcheck import CHECKS, run_all
from .train import (DivergenceError, ToyTask, TrainResult, build_toy_task,
                    toy_train)

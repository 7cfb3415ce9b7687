"""Oversized depthwise convolution networks in numpy: separable global
kernels, bifurcate gate units, reparameterized inference, independent
oracles and a compiled convolution path."""
from .tensor import DimensionError, NumericError, PointwiseParams, Rng
from .ops import (
    Dense2DKernel,
    LocalKernel7,
    OversizedKernelPair,
    compose_2d,
    dense_dwconv2d,
    dwconv7x7,
    fuse_local_global,
    parc_oh,
    parc_ow,
    parc_oversized,
    resize_kernel_linear,
)
from .model import (
    Model,
    ModelConfig,
    adapt_to_resolution,
    build_model,
    count_params_and_macs,
    model_forward,
)
from .perf import bench, fast_dwconv, plan_lowering, plan_separable, reparam_inference_mode
from .checkpoint import CheckpointError, checkpoint_load, checkpoint_save

__version__ = "0.1.0"

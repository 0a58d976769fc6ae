"""Graph convolutions, normalization, loss and optimizer with explicit backward passes."""

from .gradcheck import numeric_gradient, relative_error
from .graph import (
    AsymmetricAdjacencyError,
    diffusion_operators,
    has_bipartite_component,
    lambda_max,
    normalized_laplacian,
    power_lambda_max,
    scaled_laplacian,
)
from .layers import (
    ChebyLayer,
    Dense,
    DiffusionLayer,
    MissingCacheError,
    NodeNorm,
    cheby_backward,
    cheby_forward,
    dense_backward,
    dense_forward,
    diffusion_backward,
    diffusion_forward,
    glorot,
    node_norm_backward,
    node_norm_forward,
    relu_backward,
    relu_forward,
)
from .loss import LabelRangeError, log_softmax, softmax_xent
from .optim import OptimizerState, momentum_step

__all__ = [
    "AsymmetricAdjacencyError",
    "ChebyLayer",
    "Dense",
    "DiffusionLayer",
    "LabelRangeError",
    "MissingCacheError",
    "NodeNorm",
    "OptimizerState",
    "cheby_backward",
    "cheby_forward",
    "dense_backward",
    "dense_forward",
    "diffusion_backward",
    "diffusion_forward",
    "diffusion_operators",
    "glorot",
    "has_bipartite_component",
    "lambda_max",
    "log_softmax",
    "momentum_step",
    "node_norm_backward",
    "node_norm_forward",
    "normalized_laplacian",
    "numeric_gradient",
    "power_lambda_max",
    "relative_error",
    "relu_backward",
    "relu_forward",
    "scaled_laplacian",
    "softmax_xent",
]

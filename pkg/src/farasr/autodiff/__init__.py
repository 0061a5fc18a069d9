from .tensor import (
    GraphError,
    NumericsError,
    ShapeError,
    Tensor,
    absolute,
    as_tensor,
    batch_norm,
    concat,
    conv1d_same,
    conv2d,
    debug_checks,
    default_dtype,
    embedding_lookup,
    exp,
    flip_time,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    maximum,
    mean_pool,
    no_grad,
    set_default_dtype,
    sigmoid,
    softmax,
    sqrt,
    tanh,
    using_dtype,
    weighted_sum,
)
from .params import Parameter, ParameterStore, fan_in_scale, init_uniform
from .optim import Adam, MissingGradError, RMSPropAscent
from .checkpoint import CheckpointError, load_arrays, save_arrays

__all__ = [
    "Adam",
    "CheckpointError",
    "GraphError",
    "MissingGradError",
    "NumericsError",
    "Parameter",
    "ParameterStore",
    "RMSPropAscent",
    "ShapeError",
    "Tensor",
    "absolute",
    "as_tensor",
    "batch_norm",
    "concat",
    "conv1d_same",
    "conv2d",
    "debug_checks",
    "default_dtype",
    "embedding_lookup",
    "exp",
    "fan_in_scale",
    "flip_time",
    "init_uniform",
    "leaky_relu",
    "log",
    "log_softmax",
    "load_arrays",
    "matmul",
    "maximum",
    "mean_pool",
    "no_grad",
    "save_arrays",
    "set_default_dtype",
    "sigmoid",
    "softmax",
    "sqrt",
    "tanh",
    "using_dtype",
    "weighted_sum",
]

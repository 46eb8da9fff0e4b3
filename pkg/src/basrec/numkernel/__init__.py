"""Numeric kernel: tensors with reverse-mode gradients, seeded sampling, gradient checking."""

from .gradcheck import GradCheckReport, grad_check
from .params import ParamStore
from .rng import RngStream, Substream, sample_beta, sample_beta_array, sample_uniform
from .tensor import (
    DTYPES,
    Tensor,
    add,
    concat_rows,
    constant,
    dropout,
    embedding_gather,
    gather_rows_at,
    layer_norm,
    matmul,
    mul,
    no_grad,
    permute_rows,
    relu,
    reshape,
    scale,
    select_time,
    sigmoid,
    softmax_masked,
    softplus,
    stack_time,
    sub,
    sum_all,
    sum_axis,
    tanh,
    transpose_last2,
)

__all__ = [
    "DTYPES",
    "GradCheckReport",
    "ParamStore",
    "RngStream",
    "Substream",
    "Tensor",
    "add",
    "concat_rows",
    "constant",
    "dropout",
    "embedding_gather",
    "gather_rows_at",
    "grad_check",
    "layer_norm",
    "matmul",
    "mul",
    "no_grad",
    "permute_rows",
    "relu",
    "reshape",
    "sample_beta",
    "sample_beta_array",
    "sample_uniform",
    "scale",
    "select_time",
    "sigmoid",
    "softmax_masked",
    "softplus",
    "stack_time",
    "sub",
    "sum_all",
    "sum_axis",
    "tanh",
    "transpose_last2",
]

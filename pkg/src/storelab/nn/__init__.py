"""Minimal dense-tensor differentiable core: tape autodiff, operators,
optimizers, gradient checking, and the checkpoint container."""

from .tensor import (  # noqa: F401
    NotScalarLoss,
    SentinelError,
    ShapeMismatch,
    Tape,
    Tensor,
    add,
    backward,
    binary_cross_entropy,
    concat,
    const,
    conv2d,
    dense,
    global_maxpool,
    hadamard,
    matmul,
    maxpool2d,
    param,
    reduce_mean,
    reduce_sum,
    relu,
    set_sentinel,
    sigmoid,
    softmax,
    sub,
    take_rows,
    tanh,
)
from .optim import MissingGrad, Optimizer  # noqa: F401
from .gradcheck import GradCheckReport, grad_check  # noqa: F401
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: F401

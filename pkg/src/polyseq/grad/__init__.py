"""Reverse-mode autodiff on numpy, AdamW, checkpoints, gradient checking."""

from polyseq.grad.checkpoint import load_checkpoint, save_checkpoint
from polyseq.grad.gradcheck import gradcheck, numeric_grad
from polyseq.grad.optim import AdamW
from polyseq.grad.tensor import (
    GradMode,
    Tensor,
    absolute,
    add,
    concat,
    conv2d,
    cross_entropy,
    exp,
    l1_loss,
    layer_norm,
    log,
    log_softmax,
    matmul,
    max_pool2d,
    mul,
    no_grad,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    swapaxes,
    take,
    tanh,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "AdamW",
    "GradMode",
    "Tensor",
    "absolute",
    "add",
    "concat",
    "conv2d",
    "cross_entropy",
    "exp",
    "gradcheck",
    "l1_loss",
    "layer_norm",
    "load_checkpoint",
    "log",
    "log_softmax",
    "matmul",
    "max_pool2d",
    "mul",
    "no_grad",
    "numeric_grad",
    "power",
    "relu",
    "reshape",
    "save_checkpoint",
    "sigmoid",
    "softmax",
    "stack",
    "swapaxes",
    "take",
    "tanh",
    "tmean",
    "transpose",
    "tsum",
]

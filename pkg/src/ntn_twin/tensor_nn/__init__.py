"""Minimal reverse-mode autodiff over float64 numpy arrays."""
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .conv import channel_bias, conv2d, group_norm, layer_norm, upsample_nearest
from .gradcheck import check_gradients, numerical_grad
from .nn import Conv2d, Dense, Dropout, GroupNorm, LayerNorm, Module, Parameter
from .optim import Adam, AdamW, OptimState, cosine_anneal
from .tensor import (
    DiffTensor,
    absolute,
    add,
    as_tensor,
    broadcast_to,
    concat,
    div,
    dropout,
    elu,
    embedding_frequencies,
    exp,
    gather_rows,
    getitem,
    leaky_relu,
    log,
    matmul,
    mse,
    mul,
    no_grad,
    power,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    segment_softmax,
    segment_sum,
    sigmoid,
    silu,
    sinusoidal_embedding,
    softmax,
    sqrt,
    square,
    sub,
    swapaxes,
    tanh,
    transpose,
)

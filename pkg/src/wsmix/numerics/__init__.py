"""Float64 tensors, reverse-mode autodiff, layers and a finite-difference checker."""

from .gradcheck import finite_diff_check
from .layers import Dropout, FeedForward, LayerNorm, Linear, Module, Parameter
from .tensor import (
    ActivationTracker,
    ContractError,
    DimensionError,
    NonFiniteError,
    Tensor,
    add,
    as_tensor,
    concat,
    count_macs,
    dropout,
    exp,
    expand,
    finite_checks,
    gelu,
    narrow,
    is_grad_enabled,
    layer_norm,
    linear,
    log,
    log_softmax,
    mac_count,
    make_result,
    matmul,
    mean_all,
    mul,
    no_grad,
    reset_macs,
    reshape,
    scale,
    softmax,
    sub,
    sum_all,
    sum_axis,
    swapaxes,
    track_activations,
    unbroadcast,
    weighted_sum,
)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``."""
    loss.backward()


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()

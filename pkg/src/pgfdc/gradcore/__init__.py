"""Minimal float64 tensor core: reverse-mode autodiff, layers, Adam, checkpoints."""

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import (
    Conv2d,
    Dense,
    Module,
    cross_entropy,
    cross_entropy_logits,
    mse,
    one_hot,
    orthogonal,
)
from .optim import AdamState, adam_step, clip_grad_norm
from .tensor import ShapeError, StaleGraphError, Tensor, as_tensor, no_grad


def spawn_rngs(seed: int, n: int):
    """Independent generators for ``n`` consumers derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


__all__ = [
    "AdamState",
    "CheckpointError",
    "Conv2d",
    "Dense",
    "Module",
    "ShapeError",
    "StaleGraphError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "clip_grad_norm",
    "cross_entropy",
    "cross_entropy_logits",
    "load_checkpoint",
    "mse",
    "no_grad",
    "one_hot",
    "orthogonal",
    "save_checkpoint",
    "spawn_rngs",
]

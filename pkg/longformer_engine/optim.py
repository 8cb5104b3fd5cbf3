"""
AdamW with decoupled weight decay, global-norm gradient clipping and the
warmup / decay learning-rate laws used by the training phases.

Training masks (from a freeze policy) are honored twice: masked gradients are
zeroed before clipping, and masked entries are restored bitwise after the update.
"""

import math
from fractions import Fraction
from typing import Dict, Iterable, Literal, Optional, Tuple

import numpy as np

from .errors import UsageError
from .tensor import Tensor

LrSchedule = Literal["constant", "cosine", "polynomial"]
POLYNOMIAL_POWER = 3


def warmup_steps_for(steps: int, fraction: float = 0.1, cap: int = 10_000) -> int:
    """⌈fraction·steps⌉ capped at `cap`, computed exactly"""
    return min(math.ceil(Fraction(str(fraction)) * steps), cap)


def lr_at(
    step: int,
    base_lr: float,
    total_steps: int,
    warmup_steps: int,
    schedule: LrSchedule = "constant",
) -> float:
    """Learning rate at 1-based `step`: linear ramp to base_lr at warmup_steps, then the schedule"""
    if step < 1:
        raise UsageError(f"steps are 1-based, got {step}")
    if warmup_steps > 0 and step <= warmup_steps:
        return base_lr * step / warmup_steps
    if schedule == "constant":
        return base_lr
    span = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / span, 1.0)
    if schedule == "cosine":
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
    if schedule == "polynomial":
        return base_lr * (1.0 - progress) ** POLYNOMIAL_POWER
    raise UsageError(f"unknown lr schedule '{schedule}'")


def mask_gradients(params: Dict[str, Tensor], masks: Optional[Dict[str, np.ndarray]]) -> None:
    if not masks:
        return
    for name, tensor in params.items():
        if tensor.grad is not None and name in masks:
            tensor.grad = np.where(masks[name], tensor.grad, 0).astype(tensor.dtype, copy=False)


def global_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for tensor in params:
        if tensor.grad is not None:
            total += float(np.sum(tensor.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm; returns the norm before clipping"""
    params = list(params)
    norm = global_grad_norm(params)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for tensor in params:
            if tensor.grad is not None:
                tensor.grad = (tensor.grad * factor).astype(tensor.dtype, copy=False)
    return norm


class AdamW:
    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        masks: Optional[Dict[str, np.ndarray]] = None,
    ):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.masks = masks if masks is not None else {}
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def step(self, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        beta1, beta2 = self.betas
        self.t += 1
        correction1 = 1.0 - beta1 ** self.t
        correction2 = 1.0 - beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            mask = self.masks.get(name)
            if mask is not None and not mask.any():
                continue
            grad = p.grad
            self.m[name] = beta1 * self.m[name] + (1.0 - beta1) * grad
            self.v[name] = beta2 * self.v[name] + (1.0 - beta2) * grad * grad
            update = (self.m[name] / correction1) / (np.sqrt(self.v[name] / correction2) + self.eps)
            # layernorm gains and biases are not decayed
            decay = self.weight_decay if p.ndim >= 2 else 0.0
            new = p.data - lr * (update + decay * p.data)
            if mask is not None:
                new = np.where(mask, new, p.data)
            p.data[...] = new.astype(p.dtype, copy=False)

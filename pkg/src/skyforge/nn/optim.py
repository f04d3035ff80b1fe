"""Adam with decoupled weight decay and the validation-plateau step schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch


@dataclass
class AdamState:
    learning_rate: float
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, torch.Tensor] = field(default_factory=dict)
    second_moment: dict[str, torch.Tensor] = field(default_factory=dict)
    plateau_patience: int = 10
    plateau_factor: float = 10.0
    epochs_since_best: int = 0
    best_val_loss: float = math.inf

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")


def adam_step(
    state: AdamState,
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
) -> dict[str, torch.Tensor]:
    """One bias-corrected Adam update, mutating ``params`` in place.

    Weight decay is decoupled: parameters shrink by ``1 - lr * wd`` before the
    Adam delta, so the moment buffers never see the decay term.
    """
    if set(grads) - set(params):
        raise ValueError(f"gradients for unknown parameters: {sorted(set(grads) - set(params))}")
    state.step_count += 1
    b1, b2 = state.betas
    lr = state.learning_rate
    bias1 = 1.0 - b1 ** state.step_count
    bias2 = 1.0 - b2 ** state.step_count
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(f"{name}: gradient shape {tuple(g.shape)} != {tuple(p.shape)}")
            if name not in state.first_moment:
                state.first_moment[name] = torch.zeros_like(p)
                state.second_moment[name] = torch.zeros_like(p)
            if state.weight_decay:
                p.mul_(1.0 - lr * state.weight_decay)
            m = state.first_moment[name]
            v = state.second_moment[name]
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.addcdiv_(m / bias1, (v / bias2).sqrt().add_(state.eps), value=-lr)
    return params


def plateau_schedule(state: AdamState, val_loss: float) -> float:
    """Divide the learning rate by ``plateau_factor`` whenever the best
    validation loss has not improved for ``plateau_patience`` epochs.

    Call once per epoch; the patience counter resets both on improvement and
    on a reduction. Returns the (possibly reduced) learning rate.
    """
    if val_loss < state.best_val_loss:
        state.best_val_loss = float(val_loss)
        state.epochs_since_best = 0
    else:
        state.epochs_since_best += 1
        if state.epochs_since_best >= state.plateau_patience:
            state.learning_rate /= state.plateau_factor
            state.epochs_since_best = 0
    return state.learning_rate

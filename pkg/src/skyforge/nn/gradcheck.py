"""Central-finite-difference gradient oracle.

The oracle is deliberately independent of reverse-mode autodiff: it perturbs
every parameter element by +-eps and differences the loss. The numeric side
runs in float64 by default so the comparison error is dominated by the
analytic implementation under test, not by the oracle's own roundoff.
"""

from __future__ import annotations

from typing import Callable

import torch

from .layers import Network

MAX_CHECKED_PARAMETERS = 20_000


def grad_check(
    network: Network,
    loss_fn: Callable[[torch.Tensor], torch.Tensor],
    x: torch.Tensor,
    eps: float = 1e-4,
    numeric_dtype: torch.dtype = torch.float64,
) -> float:
    """Worst relative error |analytic - numeric| / max(|a|, |n|, 1e-8) over
    every parameter element.

    ``loss_fn`` maps the network output to a scalar and must be dtype-agnostic
    (it is re-evaluated on a float64 clone of the network).
    """
    if network.parameter_count() > MAX_CHECKED_PARAMETERS:
        raise ValueError(
            f"{network.parameter_count()} parameters exceed the "
            f"{MAX_CHECKED_PARAMETERS} tractability cap"
        )

    out = network.forward(x, remember=True)
    loss = loss_fn(out)
    names = list(network.parameters())
    tensors = list(network.parameters().values())
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)
    analytic = [
        g if g is not None else torch.zeros_like(t) for g, t in zip(analytic, tensors)
    ]

    oracle_net = network.astype(numeric_dtype)
    x_hi = x.to(numeric_dtype)
    oracle_params = oracle_net.parameters()

    worst = 0.0
    for name, a_grad in zip(names, analytic):
        p = oracle_params[name]
        flat = p.detach().reshape(-1)
        a_flat = a_grad.detach().to(torch.float64).reshape(-1)
        for j in range(flat.numel()):
            original = flat[j].item()
            with torch.no_grad():
                flat[j] = original + eps
                up = float(loss_fn(oracle_net.forward(x_hi)))
                flat[j] = original - eps
                down = float(loss_fn(oracle_net.forward(x_hi)))
                flat[j] = original
            numeric = (up - down) / (2.0 * eps)
            a = float(a_flat[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst

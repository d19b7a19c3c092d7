"""AdamW: bias-corrected Adam moments plus decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError
from .tensor import Tensor


@dataclass
class OptimConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 32
    epochs: int = 5
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ContractError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ContractError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class AdamWState:
    """First/second moment buffers mirroring the parameter shapes."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(
    params: dict[str, Tensor],
    state: AdamWState,
    cfg: OptimConfig,
) -> None:
    """One in-place update from the gradients currently held by the params.

    Parameters without a gradient buffer are skipped. Non-finite gradients
    abort before any parameter is touched so a failed step cannot corrupt
    the model.
    """
    live = {k: p for k, p in params.items() if p.grad is not None}
    for name, p in live.items():
        if not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in '{name}'; step aborted")

    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in live.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        # decay is decoupled and uses the pre-update parameter value
        if cfg.weight_decay != 0.0:
            p.data -= cfg.lr * cfg.weight_decay * p.data
        p.data -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from app.errors import ConfigurationError, SequenceTooShortError, TargetSequenceError, ZeroNormError

log = logging.getLogger("losses")


@dataclass(frozen=True)
class SmoothingConfig:
    epsilon: float
    vocab_size: int
    ignore_index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigurationError(f"Label smoothing must lie in [0, 1), got {self.epsilon}")


@dataclass
class LossReport:
    ce: float
    align: float
    lam: float
    total: float
    step: int = 0
    lr: float = 0.0
    grad_norms: dict = field(default_factory=dict)
    aborted: bool = False
    # Alignment is computed and logged even when lam is 0
    align_used: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        def finite(value):
            return value if isinstance(value, float) and math.isfinite(value) else str(value)

        data = {k: finite(v) if isinstance(v, float) else v for k, v in self.to_dict().items()}
        return json.dumps(data, sort_keys=True)


def mean_pool(seq: torch.Tensor, mask: torch.Tensor = None) -> torch.Tensor:
    """Mean over the time axis (-2); mask (..., L) selects the rows to include."""
    if seq.shape[-2] == 0:
        raise SequenceTooShortError("Cannot mean-pool an empty sequence")
    if mask is None:
        return seq.mean(dim=-2)
    weights = mask.to(seq.dtype).unsqueeze(-1)
    counts = weights.sum(dim=-2)
    if bool((counts == 0).any()):
        raise SequenceTooShortError("Cannot mean-pool a fully masked sequence")
    return (seq * weights).sum(dim=-2) / counts


def alignment_loss(z_pool: torch.Tensor, y_pool: torch.Tensor, tau) -> torch.Tensor:
    """Symmetric InfoNCE over cosine similarities scaled by 1/tau.

    Row i of z_pool and row i of y_pool form the positive pair.
    """
    if z_pool.shape != y_pool.shape or z_pool.dim() != 2:
        raise ConfigurationError(
            f"Pooled batches must both be (B, d), got {tuple(z_pool.shape)} and {tuple(y_pool.shape)}"
        )
    for name, pooled in (("sign", z_pool), ("text", y_pool)):
        if bool((pooled.norm(dim=-1) == 0).any()):
            raise ZeroNormError(f"Zero-norm pooled {name} vector, cosine similarity undefined")
    sim = F.normalize(z_pool, dim=-1) @ F.normalize(y_pool, dim=-1).T / tau
    labels = torch.arange(sim.shape[0], device=sim.device)
    return 0.5 * (F.cross_entropy(sim, labels) + F.cross_entropy(sim.T, labels))


class ContrastiveAlignment(nn.Module):
    """Alignment loss with a learnable temperature tau = exp(log_tau)."""

    def __init__(self, tau_init=0.07):
        super().__init__()
        if tau_init <= 0:
            raise ConfigurationError(f"tau_init must be positive, got {tau_init}")
        self.log_tau = nn.Parameter(torch.tensor(math.log(tau_init)))

    @property
    def tau(self):
        return self.log_tau.exp()

    def forward(self, z_pool, y_pool):
        return alignment_loss(z_pool, y_pool, self.tau)


def generation_loss(logits: torch.Tensor, targets: torch.Tensor, cfg: SmoothingConfig) -> torch.Tensor:
    """Label-smoothed cross-entropy averaged over non-padding target positions."""
    if logits.shape[-1] != cfg.vocab_size:
        raise ConfigurationError(f"Logits have {logits.shape[-1]} classes, vocabulary has {cfg.vocab_size}")
    if logits.shape[:-1] != targets.shape:
        raise ConfigurationError(
            f"Logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}"
        )
    real = targets != cfg.ignore_index
    if bool((targets[real] >= cfg.vocab_size).any()) or bool((targets[real] < 0).any()):
        raise TargetSequenceError(
            f"Target id outside vocabulary of size {cfg.vocab_size}",
            details={"max_id": int(targets.max())},
        )
    return F.cross_entropy(
        logits.reshape(-1, cfg.vocab_size),
        targets.reshape(-1),
        ignore_index=cfg.ignore_index,
        label_smoothing=cfg.epsilon,
    )


def smoothed_entropy(cfg: SmoothingConfig) -> float:
    """Entropy of the smoothed target distribution, the floor of generation_loss."""
    eps, V = cfg.epsilon, cfg.vocab_size
    gold = 1 - eps + eps / V
    other = eps / V
    entropy = -gold * math.log(gold)
    if other > 0:
        entropy -= (V - 1) * other * math.log(other)
    return entropy


def total_loss(ce, align, lam):
    return ce + lam * align

"""
Emotion-Aware Fusion.

SECTION 1: ENHANCER
    - Channel gating of the emotion stream, Z'_e = Z_e * sigmoid(G Z_e + b).
    - Per-step quality scores q_k and the quality-weighted emotion anchor.

SECTION 2: MODULATOR
    - Predicts [delta_s | delta_b] and a gate g from [Z_q ; anchor] and applies
      Z_q * (1 + tanh(delta_s) * g) + delta_b * g to each stream.

SECTION 3: TEMPORAL LAYER
    - Time-axis concatenation (spatial, motion, emotion), two conv/max-pool
      stages and the connector MLP into the translator width.

All tensors may carry leading batch dimensions: streams are (..., L, d).
"""

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn

from app.errors import ConfigurationError, DimensionError, SequenceTooShortError

log = logging.getLogger("fusion")


@dataclass
class EmotionAnchor:
    anchor: torch.Tensor  # (..., d)
    scores: torch.Tensor  # (..., F)
    weights: torch.Tensor  # (..., F)


@dataclass
class FusedRepresentation:
    data: torch.Tensor  # (..., L, d_llm)
    anchor: EmotionAnchor = None

    def __len__(self):
        return self.data.shape[-2]

    def is_finite(self) -> bool:
        return bool(torch.isfinite(self.data).all())


# --------------------------------------------------------------------
# SECTION 1: ENHANCER
# --------------------------------------------------------------------
def enhancer_gate(ze: torch.Tensor, gate: nn.Linear) -> torch.Tensor:
    if ze.shape[-1] != gate.in_features:
        raise DimensionError(f"Enhancer gate expects width {gate.in_features}, got {ze.shape[-1]}")
    return ze * torch.sigmoid(gate(ze))


def quality_scores(zpe: torch.Tensor, quality: nn.Linear) -> torch.Tensor:
    return torch.sigmoid(quality(zpe)).squeeze(-1)


def pool_anchor(zpe: torch.Tensor, q: torch.Tensor, eps: float) -> EmotionAnchor:
    if q.shape != zpe.shape[:-1]:
        raise DimensionError(f"Expected {tuple(zpe.shape[:-1])} scores, got {tuple(q.shape)}")
    weights = q / (q.sum(dim=-1, keepdim=True) + eps)
    anchor = (weights.unsqueeze(-1) * zpe).sum(dim=-2)
    return EmotionAnchor(anchor=anchor, scores=q, weights=weights)


class Enhancer(nn.Module):
    def __init__(self, d, eps=1e-6):
        super().__init__()
        if eps <= 0:
            raise ConfigurationError(f"Enhancer eps must be positive, got {eps}")
        self.gate = nn.Linear(d, d)
        self.quality = nn.Linear(d, 1)
        self.eps = eps

    def forward(self, ze):
        gated = enhancer_gate(ze, self.gate)
        return pool_anchor(gated, quality_scores(gated, self.quality), self.eps)


# --------------------------------------------------------------------
# SECTION 2: MODULATOR
# --------------------------------------------------------------------
def film_modulate(zq, delta_s, delta_b, g):
    return zq * (1 + torch.tanh(delta_s) * g) + delta_b * g


class Modulator(nn.Module):
    def __init__(self, d, gate_bias_init=-2.0):
        super().__init__()
        self.d = d
        self.param_mlp = nn.Sequential(nn.Linear(2 * d, 2 * d), nn.GELU(), nn.Linear(2 * d, 2 * d))
        self.gate_mlp = nn.Sequential(nn.Linear(2 * d, 2 * d), nn.GELU(), nn.Linear(2 * d, d))
        nn.init.constant_(self.gate_mlp[-1].bias, gate_bias_init)

    def forward(self, zq, anchor):
        return modulate(zq, anchor, self)


def modulate(zq: torch.Tensor, anchor: torch.Tensor, p: Modulator) -> torch.Tensor:
    if anchor.shape[-1] != zq.shape[-1] or zq.shape[-1] != p.d:
        raise DimensionError(
            f"Modulator width {p.d} does not match stream {zq.shape[-1]} / anchor {anchor.shape[-1]}"
        )
    replicated = anchor.unsqueeze(-2).expand_as(zq)
    joint = torch.cat([zq, replicated], dim=-1)
    delta_s, delta_b = p.param_mlp(joint).split(p.d, dim=-1)
    g = torch.sigmoid(p.gate_mlp(joint))
    return film_modulate(zq, delta_s, delta_b, g)


# --------------------------------------------------------------------
# SECTION 3: TEMPORAL LAYER
# --------------------------------------------------------------------
def fuse(*streams: torch.Tensor) -> torch.Tensor:
    if not streams:
        raise SequenceTooShortError("Nothing to fuse")
    width = streams[0].shape[-1]
    for s in streams:
        if s.shape[-2] == 0:
            raise SequenceTooShortError("Cannot fuse an empty stream")
        if s.shape[-1] != width:
            raise DimensionError(
                f"Streams must share width d, got {[x.shape[-1] for x in streams]}"
            )
    return torch.cat(streams, dim=-2)


def temporal_output_length(length: int) -> int:
    return (length // 2) // 2


class TemporalLayer(nn.Module):
    """K5, P2, K5, P2 followed by a connector with two hidden layers."""

    def __init__(self, d, d_llm, kernel_size=5):
        super().__init__()
        self.conv1 = nn.Conv1d(d, d, kernel_size, padding=kernel_size // 2)
        self.conv2 = nn.Conv1d(d, d, kernel_size, padding=kernel_size // 2)
        self.pool = nn.MaxPool1d(2)
        self.connector = nn.Sequential(
            nn.Linear(d, d_llm),
            nn.GELU(),
            nn.Linear(d_llm, d_llm),
            nn.GELU(),
            nn.Linear(d_llm, d_llm),
        )

    def identity_init(self):
        for conv in (self.conv1, self.conv2):
            nn.init.dirac_(conv.weight)
            nn.init.zeros_(conv.bias)
        return self

    def forward(self, x):
        return temporal_layer(x, self)


def temporal_layer(seq: torch.Tensor, p: TemporalLayer) -> torch.Tensor:
    length = seq.shape[-2]
    if length < 4:
        raise SequenceTooShortError(
            f"sequence too short for two pooling stages (length {length} < 4)"
        )
    # Conv1d wants channels before time
    h = seq.transpose(-1, -2)
    h = p.pool(p.conv1(h))
    h = p.pool(p.conv2(h))
    return p.connector(h.transpose(-1, -2))


class EmotionAwareFusion(nn.Module):
    def __init__(
        self,
        d,
        d_llm,
        eps=1e-6,
        share_modulator=True,
        gate_bias_init=-2.0,
        use_emotion=True,
        use_eaf=True,
    ):
        super().__init__()
        if use_eaf and not use_emotion:
            raise ConfigurationError("EAF consumes the emotion anchor and needs use_emotion")
        self.use_emotion = use_emotion
        self.use_eaf = use_eaf
        self.share_modulator = share_modulator
        self.enhancer = Enhancer(d, eps)
        n_modulators = 1 if share_modulator else 3
        self.modulators = nn.ModuleList(Modulator(d, gate_bias_init) for _ in range(n_modulators))
        self.temporal = TemporalLayer(d, d_llm)

    def modulator_for(self, stream: int) -> Modulator:
        return self.modulators[0 if self.share_modulator else stream]

    def forward(self, zs, zm, ze=None):
        return eaf_forward(zs, zm, ze, self)


def eaf_forward(zs, zm, ze, params: EmotionAwareFusion) -> FusedRepresentation:
    """Enhancer -> Modulator on each stream -> fuse -> temporal layer.

    Without emotion the emotion stream is dropped before fusion; without EAF
    the streams are concatenated unmodulated.
    """
    if not params.use_emotion:
        return FusedRepresentation(params.temporal(fuse(zs, zm)))
    if ze is None:
        raise ConfigurationError("Emotion stream required when use_emotion is set")
    if not params.use_eaf:
        return FusedRepresentation(params.temporal(fuse(zs, zm, ze)))

    anchor = params.enhancer(ze)
    modulated = [
        modulate(stream, anchor.anchor, params.modulator_for(i))
        for i, stream in enumerate((zs, zm, ze))
    ]
    return FusedRepresentation(params.temporal(fuse(*modulated)), anchor)

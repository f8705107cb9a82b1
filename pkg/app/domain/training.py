import logging
import math
import random
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from app.domain.decoding import Hypothesis, beam_search
from app.domain.features import ProjectionHead
from app.domain.fusion import EmotionAwareFusion, FusedRepresentation
from app.domain.losses import (
    ContrastiveAlignment,
    LossReport,
    SmoothingConfig,
    generation_loss,
    mean_pool,
    total_loss,
)
from app.domain.settings import HyperParameters
from app.domain.translator import (
    LoraLinear,
    Prompt,
    PromptTemplate,
    Vocabulary,
    build_prompt,
    build_translator,
    decode_teacher_forced,
)
from app.errors import DatasetError, DimensionError, NonFiniteLossError

log = logging.getLogger("training")


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


@dataclass
class TrainingExample:
    sample_id: str
    label: int
    spatial: torch.Tensor  # (T, d_s)
    motion: torch.Tensor  # (S, d_m)
    emotion: torch.Tensor  # (F, d_e)
    target_ids: list  # ends with eos
    target_text: str = ""


@dataclass
class TranslationBatch:
    spatial: torch.Tensor
    motion: torch.Tensor
    emotion: torch.Tensor
    prompt: Prompt
    targets: torch.Tensor  # (B, U), right-padded
    labels: list = field(default_factory=list)

    def __len__(self):
        return self.targets.shape[0]


def collate(examples: list[TrainingExample], prompt: Prompt, pad_id=0) -> TranslationBatch:
    if not examples:
        raise DatasetError("Cannot collate an empty batch")
    for name in ("spatial", "motion", "emotion"):
        shapes = {tuple(getattr(e, name).shape) for e in examples}
        if len(shapes) > 1:
            raise DimensionError(f"{name} streams differ in shape within a batch: {sorted(shapes)}")
    width = max(len(e.target_ids) for e in examples)
    targets = torch.full((len(examples), width), pad_id, dtype=torch.long)
    for i, e in enumerate(examples):
        targets[i, : len(e.target_ids)] = torch.tensor(e.target_ids, dtype=torch.long)
    return TranslationBatch(
        spatial=torch.stack([e.spatial for e in examples]),
        motion=torch.stack([e.motion for e in examples]),
        emotion=torch.stack([e.emotion for e in examples]),
        prompt=prompt,
        targets=targets,
        labels=[e.label for e in examples],
    )


def parameter_counts(module: nn.Module) -> tuple[int, int]:
    total = sum(p.numel() for p in module.parameters())
    trainable = sum(p.numel() for p in module.parameters() if p.requires_grad)
    return total, trainable


class SignTranslationPipeline(nn.Module):
    """Projection heads, EAF, alignment temperature and the adapted translator."""

    def __init__(self, params: HyperParameters, vocab: Vocabulary, template: PromptTemplate, feature_dims):
        super().__init__()
        seed_everything(params.seed)
        self.params = params
        self.vocab = vocab
        self.template = template
        self.feature_dims = tuple(int(d) for d in feature_dims)
        d_s, d_m, d_e = self.feature_dims
        self.spatial_head = ProjectionHead(d_s, params.model_dim)
        self.motion_head = ProjectionHead(d_m, params.model_dim)
        self.emotion_head = ProjectionHead(d_e, params.model_dim)
        self.fusion = EmotionAwareFusion(
            params.model_dim,
            params.llm_dim,
            eps=params.eps,
            share_modulator=params.share_modulator,
            gate_bias_init=params.gate_bias_init,
            use_emotion=params.use_emotion,
            use_eaf=params.use_eaf,
        )
        self.alignment = ContrastiveAlignment(params.tau_init)
        self.translator = build_translator(len(vocab), params)
        self.smoothing = SmoothingConfig(params.label_smoothing, len(vocab), vocab.pad_id)
        total, trainable = parameter_counts(self)
        log.info(
            f"Pipeline has {total} parameters, {trainable} trainable ({100.0 * trainable / total:.1f}%)"
        )

    @property
    def align_weight(self) -> float:
        return self.params.align_weight if self.params.use_alignment else 0.0

    def fuse(self, spatial, motion, emotion=None) -> FusedRepresentation:
        zs = self.spatial_head(spatial)
        zm = self.motion_head(motion)
        ze = self.emotion_head(emotion) if self.params.use_emotion else None
        return self.fusion(zs, zm, ze)

    def prompt(self, training=False, shuffle_seed=None) -> Prompt:
        return build_prompt(
            self.template,
            self.vocab,
            shuffle_seed=shuffle_seed,
            training=training,
            use_context=self.params.use_context,
        )

    def compute_losses(self, batch: TranslationBatch) -> dict:
        fused = self.fuse(batch.spatial, batch.motion, batch.emotion)
        logits = decode_teacher_forced(
            fused.data,
            batch.prompt,
            batch.targets,
            self.translator,
            bos_id=self.vocab.bos_id,
            eos_id=self.vocab.eos_id,
            pad_id=self.vocab.pad_id,
            placeholder_id=self.vocab.placeholder_id,
        )
        ce = generation_loss(logits, batch.targets, self.smoothing)

        z_pool = mean_pool(fused.data)
        target_embeddings = self.translator.embedding(batch.targets).to(z_pool.dtype)
        if self.params.align_stop_gradient:
            target_embeddings = target_embeddings.detach()
        y_pool = mean_pool(target_embeddings, mask=batch.targets != self.vocab.pad_id)
        align = self.alignment(z_pool, y_pool)

        lam = self.align_weight
        return {
            "logits": logits,
            "fused": fused,
            "ce": ce,
            "align": align,
            "lam": lam,
            "total": total_loss(ce, align, lam),
        }

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        adapters = [
            p for m in self.translator.modules() if isinstance(m, LoraLinear) for p in (m.lora_A, m.lora_B)
        ]
        groups = {
            "projection": [
                *self.spatial_head.parameters(),
                *self.motion_head.parameters(),
                *self.emotion_head.parameters(),
            ],
            "fusion": list(self.fusion.parameters()),
            "alignment": list(self.alignment.parameters()),
            "adapters": adapters,
        }
        if self.translator.embedding.weight.requires_grad:
            groups["embeddings"] = [self.translator.embedding.weight]
        return groups

    def grad_norms(self) -> dict[str, float]:
        norms = {}
        for name, params in self.parameter_groups().items():
            squares = [p.grad.detach().double().pow(2).sum() for p in params if p.grad is not None]
            norms[name] = float(torch.stack(squares).sum().sqrt()) if squares else 0.0
        return norms

    def base_state(self) -> dict[str, torch.Tensor]:
        """Frozen translator weights, for asserting they never move."""
        return {
            name: p.detach().clone()
            for name, p in self.translator.named_parameters()
            if not p.requires_grad
        }

    @torch.no_grad()
    def translate(self, spatial, motion, emotion=None, width=None, max_len=None) -> Hypothesis:
        self.eval()
        fused = self.fuse(spatial, motion, emotion)
        return beam_search(
            fused.data,
            self.prompt(training=False),
            self.translator,
            width=width or self.params.beam_width,
            max_len=max_len or self.params.max_decode_len,
            bos_id=self.vocab.bos_id,
            eos_id=self.vocab.eos_id,
            placeholder_id=self.vocab.placeholder_id,
        )


def warmup_cosine(step: int, total_steps: int, warmup_ratio: float) -> float:
    """Multiplier on the peak rate: linear warmup from 0, then cosine decay to 0."""
    warmup = max(1, round(warmup_ratio * total_steps)) if warmup_ratio > 0 else 0
    if step < warmup:
        return step / warmup
    progress = (step - warmup) / max(1, total_steps - warmup)
    return 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))


class Trainer:
    def __init__(self, pipeline: SignTranslationPipeline, total_steps: int):
        params = pipeline.params
        self.pipeline = pipeline
        self.total_steps = total_steps
        trainable = [p for p in pipeline.parameters() if p.requires_grad]
        self.optimizer = torch.optim.AdamW(
            trainable,
            lr=params.peak_lr,
            betas=(params.adam_beta1, params.adam_beta2),
            weight_decay=params.weight_decay,
        )
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer, lambda step: warmup_cosine(step, total_steps, params.warmup_ratio)
        )
        self.step = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def train_step(self, batches) -> LossReport:
        """One optimizer update accumulated over one or more micro-batches."""
        if isinstance(batches, TranslationBatch):
            batches = [batches]
        self.pipeline.train()
        self.optimizer.zero_grad(set_to_none=True)
        lr = self.lr
        ce = align = total = 0.0
        lam = self.pipeline.align_weight
        try:
            for batch in batches:
                losses = self.pipeline.compute_losses(batch)
                if not torch.isfinite(losses["total"]):
                    raise NonFiniteLossError(
                        f"Non-finite loss at step {self.step}",
                        details={"ce": losses["ce"].detach().item(), "align": losses["align"].detach().item()},
                    )
                (losses["total"] / len(batches)).backward()
                ce += losses["ce"].detach().item() / len(batches)
                align += losses["align"].detach().item() / len(batches)
                total += losses["total"].detach().item() / len(batches)
        except NonFiniteLossError as e:
            log.error(f"Aborting step {self.step}: {e}", exc_info=e)
            self.optimizer.zero_grad(set_to_none=True)
            return LossReport(
                ce=float("nan"),
                align=float("nan"),
                lam=lam,
                total=float("nan"),
                step=self.step,
                lr=lr,
                aborted=True,
                align_used=lam != 0,
            )

        grad_norms = self.pipeline.grad_norms()
        self.optimizer.step()
        self.scheduler.step()
        report = LossReport(
            ce=ce,
            align=align,
            lam=lam,
            total=total,
            step=self.step,
            lr=lr,
            grad_norms=grad_norms,
            align_used=lam != 0,
        )
        self.step += 1
        return report


def steps_per_epoch(n_examples: int, params: HyperParameters) -> int:
    return math.ceil(n_examples / (params.batch_size * params.grad_accumulation))


def train_epochs(pipeline: SignTranslationPipeline, examples: list[TrainingExample], on_report=None) -> list[dict]:
    """Train for params.epochs; returns one mean-loss summary per epoch."""
    if not examples:
        raise DatasetError("Training split is empty")
    params = pipeline.params
    per_epoch = steps_per_epoch(len(examples), params)
    trainer = Trainer(pipeline, total_steps=per_epoch * params.epochs)
    history = []
    for epoch in range(params.epochs):
        order = np.random.default_rng([params.seed, epoch]).permutation(len(examples))
        reports = []
        for step in range(per_epoch):
            chunk = order[step * params.batch_size * params.grad_accumulation :][
                : params.batch_size * params.grad_accumulation
            ]
            prompt = pipeline.prompt(training=True, shuffle_seed=params.seed + trainer.step)
            micro = [
                collate([examples[i] for i in chunk[j : j + params.batch_size]], prompt, pipeline.vocab.pad_id)
                for j in range(0, len(chunk), params.batch_size)
            ]
            report = trainer.train_step(micro)
            reports.append(report)
            if on_report is not None:
                on_report(report)
        done = [r for r in reports if not r.aborted]
        summary = {
            "epoch": epoch,
            "ce": float(np.mean([r.ce for r in done])) if done else float("nan"),
            "align": float(np.mean([r.align for r in done])) if done else float("nan"),
            "total": float(np.mean([r.total for r in done])) if done else float("nan"),
            "aborted_steps": len(reports) - len(done),
        }
        log.info(
            f"Epoch {epoch}: total={summary['total']:.4f} ce={summary['ce']:.4f} "
            f"align={summary['align']:.4f} lam={pipeline.align_weight}"
        )
        history.append(summary)
    return history

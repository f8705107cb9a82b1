import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.errors import ConfigurationError, DimensionError, PromptError, TargetSequenceError

log = logging.getLogger("translator")

PAD, BOS, EOS, SEP, UNK = "<pad>", "<bos>", "<eos>", "<sep>", "<unk>"
PLACEHOLDER = "[SIGN_FEATURES]"
SPECIAL_TOKENS = (PAD, BOS, EOS, SEP, UNK, PLACEHOLDER)
DEFAULT_INSTRUCTION = f"{PLACEHOLDER} Translate the given sentence into German ."


class Vocabulary:
    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[: len(SPECIAL_TOKENS)] != list(SPECIAL_TOKENS):
            raise ConfigurationError("Vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise ConfigurationError("Vocabulary tokens must be unique")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        self.pad_id = self.stoi[PAD]
        self.bos_id = self.stoi[BOS]
        self.eos_id = self.stoi[EOS]
        self.sep_id = self.stoi[SEP]
        self.unk_id = self.stoi[UNK]
        self.placeholder_id = self.stoi[PLACEHOLDER]

    @classmethod
    def build(cls, texts) -> "Vocabulary":
        words = sorted({w for text in texts for w in text.split()} - set(SPECIAL_TOKENS))
        return cls(list(SPECIAL_TOKENS) + words)

    def __len__(self):
        return len(self.itos)

    def encode(self, text: str, add_eos=False) -> list[int]:
        ids = [self.stoi.get(w, self.unk_id) for w in text.split()]
        return ids + [self.eos_id] if add_eos else ids

    def decode(self, ids) -> str:
        words = []
        for i in ids:
            i = int(i)
            if i == self.eos_id:
                break
            if self.itos[i] in SPECIAL_TOKENS:
                continue
            words.append(self.itos[i])
        return " ".join(words)

    def to_dict(self) -> dict:
        return {"tokens": self.itos}

    @classmethod
    def from_dict(cls, data) -> "Vocabulary":
        return cls(data["tokens"])


@dataclass
class PromptTemplate:
    instruction: str = DEFAULT_INSTRUCTION
    exemplars: list = field(default_factory=list)

    def __post_init__(self):
        count = self.instruction.split().count(PLACEHOLDER)
        if count != 1:
            raise PromptError(f"Instruction must contain {PLACEHOLDER} exactly once, found {count}")
        self.exemplars = [tuple(pair) for pair in self.exemplars]

    def texts(self) -> list[str]:
        return [self.instruction] + [t for pair in self.exemplars for t in pair]


@dataclass
class Prompt:
    tokens: list
    placeholder_position: int


def build_prompt(
    template: PromptTemplate,
    vocab: Vocabulary,
    shuffle_seed=None,
    training=False,
    use_context=True,
) -> Prompt:
    """Instruction followed by "src <sep> tgt <sep>" exemplar blocks.

    Training shuffles the exemplars with shuffle_seed; inference keeps the
    template order.
    """
    tokens = vocab.encode(template.instruction)
    if tokens.count(vocab.placeholder_id) != 1:
        raise PromptError(f"Prompt must contain {PLACEHOLDER} exactly once")
    if use_context:
        if not template.exemplars:
            raise PromptError("Prompt template has no in-context exemplars")
        order = list(range(len(template.exemplars)))
        if training:
            order = list(np.random.default_rng(shuffle_seed or 0).permutation(order))
        for i in order:
            source, target = template.exemplars[i]
            tokens += vocab.encode(source) + [vocab.sep_id] + vocab.encode(target) + [vocab.sep_id]
    return Prompt(tokens, tokens.index(vocab.placeholder_id))


class LoraLinear(nn.Module):
    """Frozen base projection plus a trainable (alpha/r) B A update, B zero at init."""

    def __init__(self, base: nn.Linear, rank=16, alpha=32.0, dropout=0.1):
        super().__init__()
        if rank < 1:
            raise ConfigurationError(f"LoRA rank must be >= 1, got {rank}")
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.scaling = alpha / rank
        factory = {"dtype": base.weight.dtype, "device": base.weight.device}
        self.lora_A = nn.Parameter(torch.empty(rank, base.in_features, **factory))
        self.lora_B = nn.Parameter(torch.zeros(base.out_features, rank, **factory))
        nn.init.kaiming_uniform_(self.lora_A, a=math.sqrt(5))
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        delta = self.dropout(x) @ self.lora_A.T @ self.lora_B.T
        return self.base(x) + self.scaling * delta


def lora_apply(base: torch.Tensor, adapter: LoraLinear, x: torch.Tensor) -> torch.Tensor:
    if base.shape[1] != x.shape[-1] or adapter.lora_A.shape[1] != x.shape[-1]:
        raise DimensionError(
            f"Input width {x.shape[-1]} does not match base {tuple(base.shape)} "
            f"or adapter A {tuple(adapter.lora_A.shape)}"
        )
    if adapter.lora_B.shape[0] != base.shape[0]:
        raise DimensionError(f"Adapter B {tuple(adapter.lora_B.shape)} does not match base {tuple(base.shape)}")
    return base @ x + adapter.scaling * (adapter.lora_B @ (adapter.lora_A @ x))


def apply_lora(model: nn.Module, rank, alpha, dropout, targets=("q_proj", "v_proj")) -> list[str]:
    wrapped = []
    for module_name, module in list(model.named_modules()):
        for child_name, child in list(module.named_children()):
            if child_name in targets and isinstance(child, nn.Linear):
                setattr(module, child_name, LoraLinear(child, rank, alpha, dropout))
                wrapped.append(f"{module_name}.{child_name}" if module_name else child_name)
    log.info(f"Wrapped {len(wrapped)} projections with rank-{rank} adapters")
    return wrapped


def sinusoidal_positions(max_len, d):
    position = torch.arange(max_len).unsqueeze(1)
    div = torch.exp(torch.arange(0, d, 2) * (-math.log(10000.0) / d))
    table = torch.zeros(max_len, d)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)[:, : d // 2]
    return table


class MultiHeadAttention(nn.Module):
    def __init__(self, d, n_heads):
        super().__init__()
        if d % n_heads:
            raise ConfigurationError(f"Width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.o_proj = nn.Linear(d, d)

    def _split(self, x):
        B, L, _ = x.shape
        return x.reshape(B, L, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, query, key_value, causal=False):
        B, Lq, d = query.shape
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key_value))
        v = self._split(self.v_proj(key_value))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if causal:
            future = torch.ones(Lq, k.shape[-2], dtype=torch.bool, device=query.device).triu(1)
            scores = scores.masked_fill(future, float("-inf"))
        out = F.softmax(scores, dim=-1) @ v
        return self.o_proj(out.transpose(1, 2).reshape(B, Lq, d))


class FeedForward(nn.Sequential):
    def __init__(self, d, mult):
        super().__init__(nn.Linear(d, mult * d), nn.GELU(), nn.Linear(mult * d, d))


class EncoderBlock(nn.Module):
    def __init__(self, d, n_heads, ff_mult):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads)
        self.norm2 = nn.LayerNorm(d)
        self.ff = FeedForward(d, ff_mult)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.ff(self.norm2(x))


class DecoderBlock(nn.Module):
    def __init__(self, d, n_heads, ff_mult):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, n_heads)
        self.norm2 = nn.LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, n_heads)
        self.norm3 = nn.LayerNorm(d)
        self.ff = FeedForward(d, ff_mult)

    def forward(self, x, memory):
        h = self.norm1(x)
        x = x + self.self_attn(h, h, causal=True)
        x = x + self.cross_attn(self.norm2(x), memory)
        return x + self.ff(self.norm3(x))


class TranslatorModel(nn.Module):
    """Pre-LN encoder-decoder with an output head tied to the embedding table."""

    def __init__(self, vocab_size, d_model=128, n_heads=4, n_layers=2, ff_mult=4, max_len=1024):
        super().__init__()
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.embedding = nn.Embedding(vocab_size, d_model)
        nn.init.normal_(self.embedding.weight, std=d_model**-0.25)
        self.register_buffer("positions", sinusoidal_positions(max_len, d_model), persistent=False)
        self.encoder = nn.ModuleList(EncoderBlock(d_model, n_heads, ff_mult) for _ in range(n_layers))
        self.decoder = nn.ModuleList(DecoderBlock(d_model, n_heads, ff_mult) for _ in range(n_layers))
        self.encoder_norm = nn.LayerNorm(d_model)
        self.decoder_norm = nn.LayerNorm(d_model)

    def freeze_base(self, train_embeddings=False):
        for p in self.parameters():
            p.requires_grad_(False)
        self.embedding.weight.requires_grad_(train_embeddings)

    def _add_positions(self, x):
        length = x.shape[-2]
        if length > self.positions.shape[0]:
            raise DimensionError(f"Sequence of {length} exceeds {self.positions.shape[0]} positions")
        return x + self.positions[:length].to(x.dtype)

    def encode(self, z: torch.Tensor, prompt_ids: torch.Tensor, placeholder_position: int):
        """Splice the fused rows z (B, L, d) in place of the placeholder token."""
        B = z.shape[0]
        prompt = self.embedding(prompt_ids).unsqueeze(0).expand(B, -1, -1).to(z.dtype)
        x = torch.cat([prompt[:, :placeholder_position], z, prompt[:, placeholder_position + 1 :]], dim=1)
        x = self._add_positions(x)
        for block in self.encoder:
            x = block(x)
        return self.encoder_norm(x)

    def decode(self, memory, decoder_input):
        x = self._add_positions(self.embedding(decoder_input).to(memory.dtype))
        for block in self.decoder:
            x = block(x, memory)
        return self.decoder_norm(x) @ self.embedding.weight.T.to(memory.dtype)

    def forward(self, z, prompt: Prompt, targets):
        return decode_teacher_forced(z, prompt, targets, self)


def build_translator(vocab_size, params, max_len=1024) -> TranslatorModel:
    """Random frozen base plus trainable LoRA adapters on the configured projections."""
    model = TranslatorModel(
        vocab_size,
        d_model=params.llm_dim,
        n_heads=params.n_heads,
        n_layers=params.n_layers,
        ff_mult=params.ff_mult,
        max_len=max_len,
    )
    model.freeze_base(train_embeddings=params.train_embeddings)
    apply_lora(model, params.lora_rank, params.lora_alpha, params.lora_dropout, params.lora_targets)
    return model


def check_prompt(prompt: Prompt, placeholder_id: int):
    position = prompt.placeholder_position
    if position is None or not 0 <= position < len(prompt.tokens) or prompt.tokens[position] != placeholder_id:
        raise PromptError("Prompt is missing the feature placeholder")


def decode_teacher_forced(z, prompt: Prompt, targets, model: TranslatorModel, bos_id=1, eos_id=2, pad_id=0, placeholder_id=5):
    """Logits (B, U, V) for every target position given the gold prefix."""
    unbatched = z.dim() == 2
    if unbatched:
        z, targets = z.unsqueeze(0), targets.unsqueeze(0)
    if z.shape[-2] == 0:
        raise DimensionError("Fused representation is empty")
    check_prompt(prompt, placeholder_id)
    lengths = (targets != pad_id).sum(dim=1)
    if bool((lengths == 0).any()):
        raise TargetSequenceError("Empty target sequence")
    last = targets.gather(1, (lengths - 1).unsqueeze(1)).squeeze(1)
    if bool((last != eos_id).any()):
        raise TargetSequenceError("Target sequences must end with eos")

    prompt_ids = torch.tensor(prompt.tokens, dtype=torch.long, device=z.device)
    memory = model.encode(z, prompt_ids, prompt.placeholder_position)
    bos = torch.full((targets.shape[0], 1), bos_id, dtype=torch.long, device=z.device)
    logits = model.decode(memory, torch.cat([bos, targets[:, :-1]], dim=1))
    return logits[0] if unbatched else logits

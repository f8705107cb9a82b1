import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from enum import Enum

from app.errors import ConfigurationError

log = logging.getLogger("settings")


class Setting:
    def __init__(self, key, value):
        self.key = key
        self.value = value

    def to_dict(self) -> dict:
        return {"key": self.key, "value": self.value}


class SamplingStrategy(Enum):
    SINGLE_FRAME = "single_frame"
    MAX_POOL = "max_pool"
    MEAN_POOL = "mean_pool"


@dataclass(frozen=True)
class HyperParameters:
    """Resolved run configuration. Defaults follow the research setup except
    for the model widths, which are scaled down to run on a CPU."""

    seed: int = 0
    # feature streams
    window_width: int = 16
    window_stride: int = 8
    emotion_interval: int = 8
    sampling: str = SamplingStrategy.SINGLE_FRAME.value
    model_dim: int = 64
    # fusion
    eps: float = 1e-6
    share_modulator: bool = True
    gate_bias_init: float = -2.0
    # translator
    llm_dim: int = 128
    n_heads: int = 4
    n_layers: int = 2
    ff_mult: int = 4
    lora_rank: int = 16
    lora_alpha: float = 32.0
    lora_dropout: float = 0.1
    lora_targets: tuple = ("q_proj", "v_proj")
    train_embeddings: bool = False
    # objectives
    label_smoothing: float = 0.1
    align_weight: float = 1.0
    tau_init: float = 0.07
    align_stop_gradient: bool = False
    # optimisation
    peak_lr: float = 6e-4
    warmup_ratio: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    weight_decay: float = 0.01
    batch_size: int = 8
    grad_accumulation: int = 2
    epochs: int = 10
    # decoding
    beam_width: int = 5
    max_decode_len: int = 24
    # ablation toggles
    use_emotion: bool = True
    use_eaf: bool = True
    use_alignment: bool = True
    use_context: bool = True

    def __post_init__(self):
        checks = [
            (self.window_width >= 1, "window_width must be >= 1"),
            (self.window_stride >= 1, "window_stride must be >= 1"),
            (self.emotion_interval >= 1, "emotion_interval must be >= 1"),
            (self.model_dim >= 1 and self.llm_dim >= 1, "model widths must be positive"),
            (self.llm_dim % self.n_heads == 0, "llm_dim must be divisible by n_heads"),
            (self.lora_rank >= 1, "lora_rank must be >= 1"),
            (0.0 <= self.lora_dropout < 1.0, "lora_dropout must lie in [0, 1)"),
            (0.0 <= self.label_smoothing < 1.0, "label_smoothing must lie in [0, 1)"),
            (self.tau_init > 0, "tau_init must be positive"),
            (self.eps > 0, "eps must be positive"),
            (0.0 <= self.warmup_ratio <= 1.0, "warmup_ratio must lie in [0, 1]"),
            (self.batch_size >= 1 and self.grad_accumulation >= 1, "batch sizes must be positive"),
            (self.beam_width >= 1, "beam_width must be >= 1"),
            (not self.use_eaf or self.use_emotion, "use_eaf requires use_emotion"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigurationError(message, details={"config": self.to_dict()})
        if self.sampling not in {s.value for s in SamplingStrategy}:
            raise ConfigurationError(f"Unknown sampling strategy '{self.sampling}'")

    @classmethod
    def from_mapping(cls, mapping: dict, strict: bool = True) -> "HyperParameters":
        """Build from loosely typed values (settings table strings, JSON)."""
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - set(known))
        if unknown and strict:
            raise ConfigurationError(f"Unknown configuration keys: {', '.join(unknown)}")
        if unknown:
            log.warning(f"Ignoring unknown configuration keys: {', '.join(unknown)}")
        values = {}
        for key, raw in mapping.items():
            if key not in known:
                continue
            values[key] = _coerce(key, raw, known[key].default)
        return cls(**values)

    def replace(self, **changes) -> "HyperParameters":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["lora_targets"] = list(self.lora_targets)
        return data

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


def default_settings() -> list[Setting]:
    """Seed rows for the settings table."""
    defaults = HyperParameters().to_dict()
    return [
        Setting(key, ",".join(value) if isinstance(value, list) else value)
        for key, value in defaults.items()
    ]


def _coerce(key, raw, default):
    try:
        if isinstance(default, bool):
            if isinstance(raw, str):
                return raw.strip().lower() in ("true", "1", "yes", "on")
            return bool(raw)
        if isinstance(default, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ConfigurationError(f"Invalid value for '{key}': {raw!r} is not a whole number")
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if isinstance(raw, str):
                return tuple(part.strip() for part in raw.split(",") if part.strip())
            return tuple(raw)
        return str(raw)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid value for '{key}': {raw!r}") from e


@dataclass
class DatasetSpec:
    """Shape of the synthetic ambiguity dataset."""

    frames: int = 100
    feature_dim: int = 32
    n_pairs: int = 3
    margin: float = 3.0
    noise: float = 1.0
    pair_separation: float = 4.0
    face_miss_rate: float = 0.1
    window_width: int = 16
    window_stride: int = 8
    emotion_interval: int = 8
    train_per_class: int = 200
    test_per_class: int = 40
    exemplars: int = 3
    # Sample k of both pair members shares one spatial and motion draw
    paired_manual: bool = False

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigurationError(f"Emotion margin must be non-negative, got {self.margin}")
        if self.n_pairs < 1:
            raise ConfigurationError("n_pairs must be >= 1")
        if self.frames < self.window_width:
            raise ConfigurationError(
                f"frames ({self.frames}) must cover one motion window ({self.window_width})"
            )
        if not 0.0 <= self.face_miss_rate < 1.0:
            raise ConfigurationError("face_miss_rate must lie in [0, 1)")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "DatasetSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigurationError(f"Unknown dataset spec keys: {', '.join(unknown)}")
        return cls(**mapping)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def spec_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]

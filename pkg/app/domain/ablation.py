import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

from app.domain.settings import HyperParameters, SamplingStrategy
from app.errors import ConfigurationError


@dataclass(frozen=True)
class AblationConfig:
    use_emotion: bool = True
    use_eaf: bool = True
    use_alignment: bool = True
    sampling: str = SamplingStrategy.SINGLE_FRAME.value
    st: int = 8
    use_context: bool = True
    label_smoothing: float = 0.1

    def __post_init__(self):
        if self.use_eaf and not self.use_emotion:
            raise ConfigurationError(
                "Invalid ablation config: EAF without emotion features", details=asdict(self)
            )
        if self.sampling not in {s.value for s in SamplingStrategy}:
            raise ConfigurationError(f"Unknown sampling strategy '{self.sampling}'")
        if self.st < 1:
            raise ConfigurationError(f"st must be >= 1, got {self.st}")

    @property
    def name(self) -> str:
        flags = [
            ("Emo", self.use_emotion),
            ("EAF", self.use_eaf),
            ("MA", self.use_alignment),
        ]
        on = "+".join(n for n, enabled in flags if enabled) or "baseline"
        return f"{on} {self.sampling}/st={self.st}"

    def apply_to(self, params: HyperParameters) -> HyperParameters:
        return params.replace(
            use_emotion=self.use_emotion,
            use_eaf=self.use_eaf,
            use_alignment=self.use_alignment,
            sampling=self.sampling,
            emotion_interval=self.st,
            use_context=self.use_context,
            label_smoothing=self.label_smoothing,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "AblationConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigurationError(f"Unknown ablation keys: {', '.join(unknown)}")
        return cls(**mapping)


# Rows of the component ablation, in table order
COMPONENT_GRID = [
    AblationConfig(use_emotion=False, use_eaf=False, use_alignment=False),
    AblationConfig(use_emotion=True, use_eaf=False, use_alignment=False),
    AblationConfig(use_emotion=True, use_eaf=True, use_alignment=False),
    AblationConfig(use_emotion=False, use_eaf=False, use_alignment=True),
    AblationConfig(use_emotion=True, use_eaf=False, use_alignment=True),
    AblationConfig(use_emotion=True, use_eaf=True, use_alignment=True),
]

SWEEP_INTERVALS = (2, 4, 8, 16)


def sampling_grid(intervals=SWEEP_INTERVALS) -> list[AblationConfig]:
    return [AblationConfig(sampling=s.value, st=st) for s in SamplingStrategy for st in intervals]


def run_config_hash(params: HyperParameters, dataset_hash: str) -> str:
    payload = json.dumps({"params": params.to_dict(), "dataset": dataset_hash}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunReport:
    config_hash: str
    name: str
    config: dict
    seed: int
    epoch_losses: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    disambiguation_accuracy: float = 0.0
    wall_clock: float = 0.0
    status: str = "completed"
    trainable_parameters: int = 0
    total_parameters: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        return cls(**data)


def render_reports(reports: list[RunReport]) -> str:
    header = f"{'Run':<36} {'B-1':>7} {'B-2':>7} {'B-3':>7} {'B-4':>7} {'R-L':>7} {'Acc':>7}"
    lines = [header]
    for r in reports:
        m = r.metrics
        values = [m.get(k, 0.0) for k in ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l_f")]
        values.append(r.disambiguation_accuracy)
        lines.append(f"{r.name:<36} " + " ".join(f"{100 * v:7.2f}" for v in values))
    return "\n".join(lines)


def sign_test(gaps: list[float]) -> float:
    """One-sided sign test p-value for "gaps are positive"; zero gaps are dropped."""
    positive = sum(1 for g in gaps if g > 0)
    n = sum(1 for g in gaps if g != 0)
    if n == 0:
        return 1.0
    return sum(math.comb(n, k) for k in range(positive, n + 1)) / 2**n

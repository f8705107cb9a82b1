import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from app.domain.features import (
    FeatureSequence,
    Modality,
    build_prototypes,
    sample_emotion_track,
    synthesize_sample,
)
from app.domain.settings import DatasetSpec
from app.domain.training import TrainingExample
from app.domain.translator import PromptTemplate, Vocabulary
from app.errors import DatasetError
from app.utils.serialization import read_feature_file, write_feature_file

log = logging.getLogger("dataset")

MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "test")

# Sentence pairs whose members differ only in the emotion-bearing word
PAIR_TEMPLATES = [
    ("ich bin heute sehr {}", ("froh", "traurig")),
    ("morgen wird das wetter {}", ("schoen", "schlecht")),
    ("der zug kommt {} an", ("puenktlich", "spaet")),
    ("das essen war {}", ("lecker", "furchtbar")),
    ("mein bruder ist {}", ("ruhig", "wuetend")),
    ("die pruefung war {}", ("leicht", "schwer")),
    ("im norden bleibt es {}", ("trocken", "nass")),
    ("der film war {}", ("spannend", "langweilig")),
]

EXEMPLARS = [
    ("the sun shines in the south", "im sueden scheint die sonne"),
    ("tomorrow it will be cold", "morgen wird es kalt"),
    ("the train is full", "der zug ist voll"),
    ("we are very tired today", "wir sind heute sehr muede"),
]


@dataclass(frozen=True)
class SentenceClass:
    label: int
    pair: int
    target: str
    token: str  # the disambiguating word
    sibling_token: str


def sentence_classes(n_pairs: int) -> list[SentenceClass]:
    classes = []
    for p in range(n_pairs):
        if p < len(PAIR_TEMPLATES):
            template, (a, b) = PAIR_TEMPLATES[p]
        else:
            template, (a, b) = f"signal {p} ist {{}}", (f"hoch{p}", f"tief{p}")
        classes.append(SentenceClass(2 * p, p, template.format(a), a, b))
        classes.append(SentenceClass(2 * p + 1, p, template.format(b), b, a))
    return classes


def prompt_template(n_exemplars: int) -> PromptTemplate:
    return PromptTemplate(exemplars=EXEMPLARS[: max(0, n_exemplars)])


def disambiguated(hypothesis: str, cls: SentenceClass) -> bool:
    """The hypothesis names the class's own word and not its sibling's."""
    words = hypothesis.split()
    return cls.token in words and cls.sibling_token not in words


@dataclass
class Sample:
    sample_id: str
    split: str
    label: int
    spatial: FeatureSequence
    motion: FeatureSequence
    emotion_track: FeatureSequence  # T rows, NaN where detection failed

    def emotion(self, st: int, strategy: str) -> FeatureSequence:
        return sample_emotion_track(self.emotion_track.data, st, strategy)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_ambiguity_dataset(spec: DatasetSpec, seed: int, out_dir) -> dict:
    """Write every sample's three feature files plus manifest.json; returns the manifest."""
    out_dir = Path(out_dir)
    prototypes = build_prototypes(spec, seed)
    classes = sentence_classes(spec.n_pairs)
    spec_hash = spec.spec_hash()
    samples = []
    index = 0
    for split_no, split in enumerate(SPLITS):
        per_class = spec.train_per_class if split == "train" else spec.test_per_class
        for cls in classes:
            for k in range(per_class):
                sample_seed = np.random.SeedSequence([seed, index])
                manual_seed = (
                    np.random.SeedSequence([seed, 0x3A1, split_no, cls.pair, k]) if spec.paired_manual else None
                )
                sample = synthesize_sample(spec, sample_seed, cls.label, prototypes, manual_seed)
                sample_id = f"{split}-{cls.label:03d}-{k:05d}"
                provenance = {"seed": seed, "sample_index": index, "spec_hash": spec_hash, "label": cls.label}
                track = FeatureSequence(Modality.EMOTION, sample.emotion_track, list(range(spec.frames)))
                files = {}
                for stream, seq in (("spatial", sample.spatial), ("motion", sample.motion), ("emotion", track)):
                    rel = f"{split}/{sample_id}.{stream}.eaff"
                    path = write_feature_file(out_dir / rel, seq, provenance | {"stream": stream})
                    files[stream] = {"path": rel, "sha256": _digest(path)}
                samples.append({"id": sample_id, "split": split, "label": cls.label, "files": files})
                index += 1

    body = {
        "spec": spec.to_dict(),
        "spec_hash": spec_hash,
        "seed": seed,
        "classes": [cls.__dict__ for cls in classes],
        "exemplars": [list(pair) for pair in prompt_template(spec.exemplars).exemplars],
        "samples": samples,
    }
    manifest = body | {"manifest_hash": hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()}
    try:
        (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, sort_keys=True, indent=2))
    except OSError as e:
        raise DatasetError(f"Failed to write manifest in {out_dir}: {e}", details={"path": str(out_dir)}) from e
    log.info(
        f"Generated {len(samples)} samples over {len(classes)} classes in {out_dir} "
        f"(manifest {manifest['manifest_hash'][:12]})"
    )
    return manifest


class AmbiguityDataset:
    def __init__(self, root):
        self.root = Path(root)
        manifest_path = self.root / MANIFEST_NAME
        if not manifest_path.exists():
            raise DatasetError(f"No manifest found at {manifest_path}", details={"path": str(manifest_path)})
        self.manifest = json.loads(manifest_path.read_text())
        self.spec = DatasetSpec.from_mapping(self.manifest["spec"])
        self.classes = [SentenceClass(**c) for c in self.manifest["classes"]]
        self.template = PromptTemplate(exemplars=[tuple(p) for p in self.manifest["exemplars"]])

    @property
    def manifest_hash(self) -> str:
        return self.manifest["manifest_hash"]

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.build([c.target for c in self.classes] + self.template.texts())

    def feature_dims(self) -> tuple[int, int, int]:
        d = self.spec.feature_dim
        return d, d, d

    def load_split(self, split: str) -> list[Sample]:
        entries = [s for s in self.manifest["samples"] if s["split"] == split]
        if not entries:
            raise DatasetError(f"Split '{split}' is empty in {self.root}")
        return [
            Sample(
                sample_id=s["id"],
                split=split,
                label=s["label"],
                spatial=read_feature_file(self.root / s["files"]["spatial"]["path"]),
                motion=read_feature_file(self.root / s["files"]["motion"]["path"]),
                emotion_track=read_feature_file(self.root / s["files"]["emotion"]["path"]),
            )
            for s in entries
        ]

    def examples(self, split: str, vocab: Vocabulary, st: int, strategy: str) -> list[TrainingExample]:
        return [
            TrainingExample(
                sample_id=s.sample_id,
                label=s.label,
                spatial=s.spatial.data,
                motion=s.motion.data,
                emotion=s.emotion(st, strategy).data,
                target_ids=vocab.encode(self.classes[s.label].target, add_eos=True),
                target_text=self.classes[s.label].target,
            )
            for s in self.load_split(split)
        ]

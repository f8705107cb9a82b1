"""
Feature streams: spatial, motion and emotion sequences extracted from a
frame sequence through pluggable encoders, plus the projection heads that
map every stream to the shared width d.

    spatial  T rows  (global view + mean of four quadrant crops per frame)
    motion   S rows  (sliding windows of width w, stride sd)
    emotion  F rows  (one row every st frames, failed detections interpolated)
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.domain.encoders import Encoder, FaceDetector
from app.domain.settings import DatasetSpec, HyperParameters, SamplingStrategy
from app.errors import (
    ConfigurationError,
    DimensionError,
    NoValidFramesError,
    SequenceTooShortError,
)

log = logging.getLogger("features")

MIN_CROP_SIZE = 2


class Modality(Enum):
    SPATIAL = 0
    MOTION = 1
    EMOTION = 2


@dataclass
class FrameSequence:
    frames: torch.Tensor  # (T, H, W, C), values in [0, 1]
    fps: float = 25.0

    def __post_init__(self):
        if self.frames.dim() != 4:
            raise DimensionError(f"Frames must be (T, H, W, C), got {tuple(self.frames.shape)}")
        if self.frames.shape[0] < 1:
            raise SequenceTooShortError("A frame sequence needs at least one frame")

    def __len__(self):
        return self.frames.shape[0]

    def __getitem__(self, index):
        return self.frames[index]


@dataclass
class FeatureSequence:
    modality: Modality
    data: torch.Tensor  # (L, d_feat)
    frame_index: list
    valid: torch.Tensor = field(default=None)

    def __post_init__(self):
        if self.data.dim() != 2:
            raise DimensionError(f"Feature data must be 2-D, got {tuple(self.data.shape)}")
        length = self.data.shape[0]
        if length < 1:
            raise SequenceTooShortError(f"{self.modality.name.lower()} stream is empty")
        self.frame_index = [int(i) for i in self.frame_index]
        if len(self.frame_index) != length:
            raise DimensionError(
                f"frame_index has {len(self.frame_index)} entries for {length} rows"
            )
        if any(b <= a for a, b in zip(self.frame_index, self.frame_index[1:])):
            raise DimensionError("frame_index must be strictly increasing")
        if self.valid is None:
            self.valid = torch.ones(length, dtype=torch.bool)
        elif self.valid.shape != (length,):
            raise DimensionError(f"valid mask must have {length} entries")

    def __len__(self):
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def with_data(self, data, valid=None) -> "FeatureSequence":
        return FeatureSequence(
            self.modality, data, list(self.frame_index), self.valid.clone() if valid is None else valid
        )


class ProjectionHead(nn.Module):
    """Lightweight head mapping one stream to the shared width d."""

    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim)

    @property
    def in_features(self):
        return self.linear.in_features

    def forward(self, x):
        if x.shape[-1] != self.linear.in_features:
            raise DimensionError(
                f"Projection expects width {self.linear.in_features}, got {x.shape[-1]}",
                details={"expected": self.linear.in_features, "actual": x.shape[-1]},
            )
        return self.linear(x)


def motion_window_starts(T: int, w: int, sd: int) -> list[int]:
    if w < 1 or sd < 1:
        raise ConfigurationError(f"Window width and stride must be >= 1 (w={w}, sd={sd})")
    if T < w:
        raise SequenceTooShortError(
            f"video shorter than window ({T} frames < w={w})", details={"T": T, "w": w}
        )
    return list(range(0, T - w + 1, sd))


def emotion_sample_indices(T: int, st: int) -> list[int]:
    """Sampled frame indices {0, st, 2st, ...} strictly below T."""
    if st < 1:
        raise ConfigurationError(f"Emotion sampling interval must be >= 1, got {st}")
    return list(range(0, T, st))


def extract_spatial(frames: FrameSequence, enc: Encoder) -> FeatureSequence:
    rows = []
    with torch.no_grad():
        for t in range(len(frames)):
            frame = frames[t]
            height, width = frame.shape[0], frame.shape[1]
            if height < MIN_CROP_SIZE or width < MIN_CROP_SIZE:
                raise DimensionError(
                    f"Frame {t} is {height}x{width}, smaller than the minimum crop size",
                    details={"frame_index": t},
                )
            global_view = F.interpolate(
                frame.permute(2, 0, 1).unsqueeze(0).float(),
                size=enc.input_size,
                mode="bilinear",
                align_corners=False,
            )[0].permute(1, 2, 0)
            half_h, half_w = height // 2, width // 2
            quadrants = [
                frame[:half_h, :half_w],
                frame[:half_h, half_w:],
                frame[half_h:, :half_w],
                frame[half_h:, half_w:],
            ]
            local = torch.stack([enc.encode(q) for q in quadrants]).mean(dim=0)
            rows.append(torch.cat([enc.encode(global_view), local]))
    return FeatureSequence(Modality.SPATIAL, torch.stack(rows), list(range(len(frames))))


def extract_motion(frames: FrameSequence, enc: Encoder, w: int, sd: int) -> FeatureSequence:
    starts = motion_window_starts(len(frames), w, sd)
    with torch.no_grad():
        rows = [enc.encode_clip(frames.frames[s : s + w]) for s in starts]
    return FeatureSequence(Modality.MOTION, torch.stack(rows), starts)


def extract_emotion(
    frames: FrameSequence,
    detect: FaceDetector,
    enc: Encoder,
    st: int,
    strategy: str = SamplingStrategy.SINGLE_FRAME.value,
) -> FeatureSequence:
    T = len(frames)
    indices = emotion_sample_indices(T, st)
    # Frames never read by the chosen strategy stay NaN
    wanted = indices if strategy == SamplingStrategy.SINGLE_FRAME.value else range(T)
    track = torch.full((T, enc.out_dim), float("nan"))
    with torch.no_grad():
        for t in wanted:
            crop = detect.detect(frames[t], t)
            if crop is not None:
                track[t] = enc.encode(crop)
    failed = sum(1 for t in indices if torch.isnan(track[t]).any())
    if failed:
        log.info(f"Face detection failed on {failed} of {len(indices)} sampled frames")
    return sample_emotion_track(track, st, strategy)


def sample_emotion_track(track: torch.Tensor, st: int, strategy: str) -> FeatureSequence:
    """Downsample a per-frame emotion track (NaN rows = failed detection).

    single_frame reads frame k*st; max_pool and mean_pool aggregate the valid
    frames of the window [k*st, (k+1)*st).
    """
    try:
        strategy = SamplingStrategy(strategy)
    except ValueError as e:
        raise ConfigurationError(f"Unknown sampling strategy '{strategy}'") from e

    T = track.shape[0]
    indices = emotion_sample_indices(T, st)
    frame_ok = ~torch.isnan(track).any(dim=-1)
    rows = torch.zeros(len(indices), track.shape[1], dtype=track.dtype)
    valid = torch.zeros(len(indices), dtype=torch.bool)
    for k, start in enumerate(indices):
        if strategy is SamplingStrategy.SINGLE_FRAME:
            if frame_ok[start]:
                rows[k] = track[start]
                valid[k] = True
            continue
        window = track[start : start + st][frame_ok[start : start + st]]
        if window.shape[0] == 0:
            continue
        if strategy is SamplingStrategy.MAX_POOL:
            rows[k] = window.max(dim=0).values
        else:
            rows[k] = window.mean(dim=0)
        valid[k] = True

    if not valid.any():
        raise NoValidFramesError("no valid face frames", details={"T": T, "st": st})
    return interpolate_missing(FeatureSequence(Modality.EMOTION, rows, indices, valid))


def interpolate_missing(seq: FeatureSequence) -> FeatureSequence:
    valid = seq.valid
    if not valid.any():
        raise NoValidFramesError("no valid face frames to interpolate from")
    if valid.all():
        return seq.with_data(seq.data.clone())

    x = torch.tensor(seq.frame_index, dtype=seq.data.dtype)
    known_x = x[valid]
    known = seq.data[valid]
    n = known_x.shape[0]
    right = torch.searchsorted(known_x, x)
    lo = (right - 1).clamp(0, n - 1)
    hi = right.clamp(0, n - 1)
    span = known_x[hi] - known_x[lo]
    has_span = span > 0
    safe_span = torch.where(has_span, span, torch.ones_like(span))
    t = torch.where(has_span, (x - known_x[lo]) / safe_span, torch.zeros_like(span)).clamp(0, 1)
    filled = known[lo] + t.unsqueeze(-1) * (known[hi] - known[lo])
    data = torch.where(valid.unsqueeze(-1), seq.data, filled)
    return seq.with_data(data, valid=torch.ones_like(valid))


def project(seq: FeatureSequence, head: ProjectionHead) -> FeatureSequence:
    if seq.dim != head.in_features:
        raise DimensionError(
            f"Projection head expects width {head.in_features}, {seq.modality.name.lower()} "
            f"stream has {seq.dim}"
        )
    return seq.with_data(head(seq.data))


@dataclass
class StreamEncoders:
    spatial: Encoder
    motion: Encoder
    emotion: Encoder


def extract_streams(
    frames: FrameSequence,
    encoders: StreamEncoders,
    detector: FaceDetector,
    params: HyperParameters,
) -> tuple[FeatureSequence, FeatureSequence, FeatureSequence]:
    spatial = extract_spatial(frames, encoders.spatial)
    motion = extract_motion(frames, encoders.motion, params.window_width, params.window_stride)
    emotion = extract_emotion(
        frames, detector, encoders.emotion, params.emotion_interval, params.sampling
    )
    log.info(
        f"Extracted streams with lengths ({len(spatial)}, {len(motion)}, {len(emotion)})"
    )
    return spatial, motion, emotion


@dataclass
class ClassPrototypes:
    """Per-class stream means. Both members of a pair share the manual means."""

    spatial: np.ndarray  # (n_pairs, d)
    motion: np.ndarray  # (n_pairs, d)
    emotion: np.ndarray  # (2 * n_pairs, d)


def build_prototypes(spec: DatasetSpec, seed) -> ClassPrototypes:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    d = spec.feature_dim
    spatial = rng.standard_normal((spec.n_pairs, d)) * spec.pair_separation / np.sqrt(d)
    motion = rng.standard_normal((spec.n_pairs, d)) * spec.pair_separation / np.sqrt(d)
    emotion_base = rng.standard_normal((spec.n_pairs, d)) * spec.pair_separation / np.sqrt(d)
    directions = rng.standard_normal((spec.n_pairs, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    emotion = np.empty((2 * spec.n_pairs, d))
    # The two members of a pair sit margin apart along a random unit direction
    emotion[0::2] = emotion_base - 0.5 * spec.margin * directions
    emotion[1::2] = emotion_base + 0.5 * spec.margin * directions
    return ClassPrototypes(spatial, motion, emotion)


@dataclass
class SyntheticSample:
    label: int
    spatial: FeatureSequence
    motion: FeatureSequence
    emotion_track: torch.Tensor  # (T, d) with NaN rows where detection failed


def synthesize_sample(
    spec: DatasetSpec, seed, label: int, prototypes: ClassPrototypes, manual_seed=None
) -> SyntheticSample:
    """Noisy streams around the class prototypes. With manual_seed the spatial
    and motion noise comes from that seed instead of the sample seed."""
    if not 0 <= label < 2 * spec.n_pairs:
        raise ConfigurationError(f"Label {label} outside 0..{2 * spec.n_pairs - 1}")
    rng = np.random.default_rng(seed)
    pair = label // 2
    T, d = spec.frames, spec.feature_dim
    starts = motion_window_starts(T, spec.window_width, spec.window_stride)

    manual_rng = rng if manual_seed is None else np.random.default_rng(manual_seed)
    spatial = prototypes.spatial[pair] + spec.noise * manual_rng.standard_normal((T, d))
    motion = prototypes.motion[pair] + spec.noise * manual_rng.standard_normal((len(starts), d))
    track = prototypes.emotion[label] + spec.noise * rng.standard_normal((T, d))
    missed = rng.random(T) < spec.face_miss_rate
    missed[0] = False
    track[missed] = np.nan

    return SyntheticSample(
        label=label,
        spatial=FeatureSequence(
            Modality.SPATIAL, torch.from_numpy(spatial.astype(np.float32)), list(range(T))
        ),
        motion=FeatureSequence(Modality.MOTION, torch.from_numpy(motion.astype(np.float32)), starts),
        emotion_track=torch.from_numpy(track.astype(np.float32)),
    )


def synthesize_features(
    spec: DatasetSpec,
    seed,
    label: int = 0,
    prototypes: ClassPrototypes = None,
    sampling: str = SamplingStrategy.SINGLE_FRAME.value,
) -> tuple[FeatureSequence, FeatureSequence, FeatureSequence]:
    """Deterministic stand-in for the frozen backbones.

    Classes 2p and 2p+1 form an ambiguity pair: their spatial and motion
    streams come from the same distribution, their emotion streams sit
    spec.margin apart.
    """
    if prototypes is None:
        prototypes = build_prototypes(spec, seed)
    sample = synthesize_sample(spec, seed, label, prototypes)
    emotion = sample_emotion_track(sample.emotion_track, spec.emotion_interval, sampling)
    return sample.spatial, sample.motion, emotion

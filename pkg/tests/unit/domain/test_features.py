import numpy as np
import pytest
import torch

from app.domain.encoders import (
    CenterCropDetector,
    ClipProjectionEncoder,
    FirstPixelEncoder,
    MaskedDetector,
    RandomProjectionEncoder,
)
from app.domain.features import (
    FeatureSequence,
    FrameSequence,
    Modality,
    ProjectionHead,
    StreamEncoders,
    build_prototypes,
    extract_emotion,
    extract_motion,
    extract_spatial,
    extract_streams,
    interpolate_missing,
    motion_window_starts,
    project,
    sample_emotion_track,
    synthesize_features,
    synthesize_sample,
)
from app.domain.settings import DatasetSpec, HyperParameters
from app.errors import (
    ConfigurationError,
    DimensionError,
    NoValidFramesError,
    SequenceTooShortError,
)


def video(T, size=8, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return FrameSequence(torch.rand(T, size, size, 3, generator=generator))


def test_spatial_constant_video_gives_identical_rows():
    frames = FrameSequence(torch.full((5, 8, 8, 3), 0.3))
    seq = extract_spatial(frames, RandomProjectionEncoder(out_dim=4))
    assert torch.equal(seq.data, seq.data[0].expand_as(seq.data))


def test_spatial_first_pixel_encoder_on_quadrants():
    a, b, c, d = 0.1, 0.2, 0.3, 0.8
    frame = torch.tensor([[a, b], [c, d]]).unsqueeze(-1).repeat(1, 1, 3)
    seq = extract_spatial(FrameSequence(frame.unsqueeze(0)), FirstPixelEncoder())
    expected = torch.tensor([(a + b + c + d) / 4, (a + b + c + d) / 4])
    assert torch.allclose(seq.data[0], expected, atol=1e-6)


def test_spatial_one_row_per_frame_and_doubled_width():
    enc = RandomProjectionEncoder(out_dim=5)
    seq = extract_spatial(video(100), enc)
    assert seq.data.shape == (100, 2 * enc.out_dim)
    assert seq.frame_index == list(range(100))
    assert bool(seq.valid.all())


def test_spatial_rejects_tiny_frame():
    frames = FrameSequence(torch.rand(3, 1, 4, 3))
    with pytest.raises(DimensionError) as e:
        extract_spatial(frames, FirstPixelEncoder())
    assert e.value.details["frame_index"] == 0


@pytest.mark.parametrize("T, expected", [(100, 11), (16, 1), (17, 1)])
def test_motion_window_count(T, expected):
    seq = extract_motion(video(T, size=4), ClipProjectionEncoder(out_dim=3), 16, 8)
    assert len(seq) == expected
    assert seq.frame_index == [8 * k for k in range(expected)]


def test_motion_window_law_matches_enumeration():
    for w, sd in [(16, 8), (5, 3), (1, 1), (7, 7)]:
        for T in range(w, 513):
            brute = [s for s in range(T) if s % sd == 0 and s + w <= T]
            assert motion_window_starts(T, w, sd) == brute
            assert len(brute) == (T - w) // sd + 1


def test_motion_row_encodes_its_window():
    frames = video(20, size=4)
    enc = ClipProjectionEncoder(out_dim=3)
    seq = extract_motion(frames, enc, 8, 4)
    assert torch.equal(seq.data[2], enc.encode_clip(frames.frames[8:16]))


def test_motion_rejects_short_video():
    with pytest.raises(SequenceTooShortError, match="video shorter than window"):
        extract_motion(video(10, size=4), ClipProjectionEncoder(out_dim=3), 16, 8)


def test_emotion_row_count_and_indices():
    seq = extract_emotion(video(100), CenterCropDetector(), RandomProjectionEncoder(out_dim=4), 8)
    assert len(seq) == 13
    assert seq.frame_index == list(range(0, 100, 8))


@pytest.mark.parametrize("strategy", ["single_frame", "max_pool", "mean_pool"])
def test_emotion_row_count_for_every_video_length(strategy):
    rng = np.random.default_rng(0)
    for T in range(16, 513):
        st = int(rng.integers(1, 17))
        seq = sample_emotion_track(torch.randn(T, 2), st, strategy)
        assert len(seq) == -(-T // st)
        assert seq.frame_index == list(range(0, T, st))


def test_emotion_equals_raw_encodings_when_all_detected():
    frames = video(24)
    detector = CenterCropDetector()
    enc = RandomProjectionEncoder(out_dim=4)
    seq = extract_emotion(frames, detector, enc, 8)
    raw = torch.stack([enc.encode(detector.detect(frames[t], t)) for t in (0, 8, 16)])
    assert torch.equal(seq.data, raw)


def test_emotion_interpolates_missed_detection():
    frames = video(24)
    enc = RandomProjectionEncoder(out_dim=4)
    mask = [t != 8 for t in range(24)]
    seq = extract_emotion(frames, MaskedDetector(mask), enc, 8)
    assert torch.allclose(seq.data[1], (seq.data[0] + seq.data[2]) / 2)
    assert bool(seq.valid.all())


def test_emotion_all_detections_fail():
    with pytest.raises(NoValidFramesError, match="no valid face frames"):
        extract_emotion(video(24), MaskedDetector([False] * 24), RandomProjectionEncoder(out_dim=4), 8)


def test_sample_track_pooling_strategies():
    track = torch.arange(8.0).reshape(8, 1)
    track[1] = float("nan")
    single = sample_emotion_track(track, 4, "single_frame")
    max_pool = sample_emotion_track(track, 4, "max_pool")
    mean_pool = sample_emotion_track(track, 4, "mean_pool")
    assert single.data.squeeze(-1).tolist() == [0.0, 4.0]
    assert max_pool.data.squeeze(-1).tolist() == [3.0, 7.0]
    assert mean_pool.data.squeeze(-1).tolist() == [pytest.approx(5 / 3), 5.5]


def test_sample_track_unknown_strategy():
    with pytest.raises(ConfigurationError):
        sample_emotion_track(torch.zeros(8, 2), 4, "median")


def seq_with_gaps(rows, valid):
    data = torch.tensor(rows, dtype=torch.float64)
    return FeatureSequence(Modality.EMOTION, data, list(range(len(rows))), torch.tensor(valid))


def test_interpolate_identity_on_complete_data():
    seq = seq_with_gaps([[1.0, 2.0], [3.0, 4.0]], [True, True])
    assert torch.equal(interpolate_missing(seq).data, seq.data)


def test_interpolate_two_gaps():
    u, v = [0.0, 3.0], [6.0, 0.0]
    seq = seq_with_gaps([u, [9.0, 9.0], [9.0, 9.0], v], [True, False, False, True])
    out = interpolate_missing(seq).data
    assert torch.allclose(out[1], torch.tensor([2.0, 2.0], dtype=torch.float64))
    assert torch.allclose(out[2], torch.tensor([4.0, 1.0], dtype=torch.float64))
    assert torch.equal(out[0], seq.data[0])
    assert torch.equal(out[3], seq.data[3])


def test_interpolate_copies_edges():
    u = [1.5, -2.0]
    seq = seq_with_gaps([[0.0, 0.0], u, [0.0, 0.0]], [False, True, False])
    out = interpolate_missing(seq)
    assert torch.equal(out.data, torch.tensor([u, u, u], dtype=torch.float64))
    assert bool(out.valid.all())


def test_interpolate_uses_frame_index_spacing():
    data = torch.tensor([[0.0], [5.0], [10.0]])
    seq = FeatureSequence(Modality.EMOTION, data, [0, 2, 10], torch.tensor([True, False, True]))
    assert interpolate_missing(seq).data[1].item() == pytest.approx(2.0)


def test_interpolate_is_idempotent():
    rng = np.random.default_rng(3)
    for _ in range(20):
        valid = rng.random(9) < 0.5
        valid[rng.integers(9)] = True
        seq = FeatureSequence(
            Modality.EMOTION, torch.from_numpy(rng.standard_normal((9, 3))), list(range(9)), torch.from_numpy(valid)
        )
        once = interpolate_missing(seq)
        assert torch.equal(interpolate_missing(once).data, once.data)


def test_interpolate_needs_one_valid_row():
    with pytest.raises(NoValidFramesError):
        interpolate_missing(seq_with_gaps([[1.0], [2.0]], [False, False]))


def test_project_identity_and_constant():
    seq = FeatureSequence(Modality.MOTION, torch.randn(4, 3), [0, 8, 16, 24])
    head = ProjectionHead(3, 3)
    with torch.no_grad():
        head.linear.weight.copy_(torch.eye(3))
        head.linear.bias.zero_()
    out = project(seq, head)
    assert torch.equal(out.data, seq.data)
    assert out.frame_index == seq.frame_index

    with torch.no_grad():
        head.linear.weight.zero_()
        head.linear.bias.copy_(torch.tensor([1.0, 2.0, 3.0]))
    assert torch.equal(project(seq, head).data, torch.tensor([[1.0, 2.0, 3.0]] * 4))


def test_project_output_width():
    seq = FeatureSequence(Modality.SPATIAL, torch.randn(6, 16), list(range(6)))
    assert project(seq, ProjectionHead(16, 1024)).data.shape == (6, 1024)


def test_project_is_affine():
    head = ProjectionHead(5, 4).double()
    u, v = torch.randn(3, 5, dtype=torch.float64), torch.randn(3, 5, dtype=torch.float64)
    alpha, beta = 0.7, -1.3
    with torch.no_grad():
        lhs = head(alpha * u + beta * v)
        rhs = alpha * head(u) + beta * head(v) - (alpha + beta - 1) * head.linear.bias
    assert torch.allclose(lhs, rhs, atol=1e-10, rtol=0)


def test_project_dimension_mismatch():
    seq = FeatureSequence(Modality.SPATIAL, torch.randn(2, 4), [0, 1])
    with pytest.raises(DimensionError):
        project(seq, ProjectionHead(3, 2))


def test_feature_sequence_invariants():
    with pytest.raises(DimensionError):
        FeatureSequence(Modality.SPATIAL, torch.zeros(2, 2), [1, 1])
    with pytest.raises(SequenceTooShortError):
        FeatureSequence(Modality.SPATIAL, torch.zeros(0, 2), [])


def test_extract_streams_lengths():
    params = HyperParameters()
    encoders = StreamEncoders(
        RandomProjectionEncoder(out_dim=4),
        ClipProjectionEncoder(out_dim=4),
        RandomProjectionEncoder(name="emotion", out_dim=4, seed=2),
    )
    spatial, motion, emotion = extract_streams(video(100), encoders, CenterCropDetector(), params)
    assert (len(spatial), len(motion), len(emotion)) == (100, 11, 13)


def test_synthesize_is_deterministic():
    spec = DatasetSpec()
    first = synthesize_features(spec, 7, label=1)
    second = synthesize_features(spec, 7, label=1)
    for a, b in zip(first, second):
        assert torch.equal(a.data, b.data)


def test_synthesize_lengths():
    spatial, motion, emotion = synthesize_features(DatasetSpec(), 0)
    assert (len(spatial), len(motion), len(emotion)) == (100, 11, 13)


def test_synthesize_rejects_negative_margin():
    with pytest.raises(ConfigurationError):
        DatasetSpec(margin=-1.0)


def test_synthesize_pair_statistics():
    spec = DatasetSpec(frames=32, feature_dim=8, face_miss_rate=0.0, margin=3.0)
    prototypes = build_prototypes(spec, 0)
    means = {}
    for label in (0, 1):
        samples = [
            synthesize_sample(spec, np.random.SeedSequence([0, label, i]), label, prototypes) for i in range(100)
        ]
        means[label] = (
            torch.stack([s.spatial.data.mean(dim=0) for s in samples]).mean(dim=0),
            torch.stack([s.emotion_track.mean(dim=0) for s in samples]).mean(dim=0),
        )
    spatial_gap = (means[0][0] - means[1][0]).norm().item()
    emotion_gap = (means[0][1] - means[1][1]).norm().item()
    assert spatial_gap < 0.2
    assert emotion_gap >= 0.9 * spec.margin


def test_shared_manual_seed_pins_manual_streams():
    spec = DatasetSpec(frames=20, feature_dim=6, window_width=8, window_stride=4)
    prototypes = build_prototypes(spec, 0)
    a = synthesize_sample(spec, 1, 0, prototypes, manual_seed=7)
    b = synthesize_sample(spec, 2, 1, prototypes, manual_seed=7)
    assert torch.equal(a.spatial.data, b.spatial.data)
    assert torch.equal(a.motion.data, b.motion.data)
    assert not torch.allclose(a.emotion_track, b.emotion_track, equal_nan=True)
    other = synthesize_sample(spec, 1, 0, prototypes, manual_seed=8)
    assert not torch.equal(a.spatial.data, other.spatial.data)


def test_zero_margin_pairs_share_emotion_means():
    spec = DatasetSpec(margin=0.0)
    prototypes = build_prototypes(spec, 0)
    assert np.array_equal(prototypes.emotion[0], prototypes.emotion[1])

import numpy as np
import pytest

from crosswatch.data import (
    ACTION_CLASSES,
    AnnotationError,
    BaseAction,
    BoundingBox,
    CrossingPhase,
    Dataset,
    EgoRecord,
    FeatureError,
    FeatureTable,
    FrameAnnotation,
    SemanticAction,
    Track,
    augment_actions,
    balanced_sampler,
    load_annotations,
    load_features,
    sample_event_to_crossing,
    sample_original,
    write_annotations,
    write_features,
)
from crosswatch.synthetic import GeneratorConfig, generate_synthetic


# independent truth table: every (base, intent, phase) triple and the class it
# must land on, spelled out case by case
TRUTH_TABLE = {
    (BaseAction.STANDING, 0, CrossingPhase.PRE): SemanticAction.STANDING,
    (BaseAction.STANDING, 1, CrossingPhase.PRE): SemanticAction.WAITING,
    (BaseAction.WALKING, 0, CrossingPhase.PRE): SemanticAction.OTHER_WALKING,
    (BaseAction.WALKING, 1, CrossingPhase.PRE): SemanticAction.GOING_TOWARDS,
    (BaseAction.STANDING, 0, CrossingPhase.CROSSING): SemanticAction.CROSSING,
    (BaseAction.STANDING, 1, CrossingPhase.CROSSING): SemanticAction.CROSSING,
    (BaseAction.WALKING, 0, CrossingPhase.CROSSING): SemanticAction.CROSSING,
    (BaseAction.WALKING, 1, CrossingPhase.CROSSING): SemanticAction.CROSSING,
    (BaseAction.STANDING, 0, CrossingPhase.CROSSED): SemanticAction.CROSSED_AND_STANDING,
    (BaseAction.STANDING, 1, CrossingPhase.CROSSED): SemanticAction.CROSSED_AND_STANDING,
    (BaseAction.WALKING, 0, CrossingPhase.CROSSED): SemanticAction.CROSSED_AND_WALKING,
    (BaseAction.WALKING, 1, CrossingPhase.CROSSED): SemanticAction.CROSSED_AND_WALKING,
}


def test_augment_actions_matches_truth_table():
    for (base, intent, phase), expected in TRUTH_TABLE.items():
        assert augment_actions(base, intent, phase) is expected


def test_augment_actions_total_and_surjective():
    outputs = {augment_actions(b, i, p) for b in BaseAction for i in (0, 1) for p in CrossingPhase}
    assert outputs == set(ACTION_CLASSES)
    assert len(TRUTH_TABLE) == 12


def _track(track_id, length, split="train", intent=0, cross_at=None):
    frames = []
    for t in range(length):
        if cross_at is not None and t >= cross_at:
            phase = CrossingPhase.CROSSING
        else:
            phase = CrossingPhase.PRE
        base = BaseAction.WALKING
        frames.append(FrameAnnotation(
            frame_index=t,
            box=BoundingBox(10.0, 10.0, 40.0, 100.0),
            base_action=base,
            intent=intent,
            crossing_phase=phase,
            semantic_action=augment_actions(base, intent, phase),
            visual_feature_key=f"{track_id}/{t}",
        ))
    return Track(track_id, split, frames)


def test_sample_original_window_arithmetic():
    ds = Dataset(fps=10.0, tracks=[_track("a", 40)])
    samples, skipped = sample_original(ds, t_window=30, stride=10)
    assert len(samples) == 2 and not skipped
    assert [f.frame_index for f in samples[0].frames] == list(range(0, 30))
    assert [f.frame_index for f in samples[1].frames] == list(range(10, 40))


def test_sample_original_short_track_skipped():
    ds = Dataset(fps=10.0, tracks=[_track("short", 29)])
    samples, skipped = sample_original(ds, t_window=30, stride=10)
    assert samples == [] and skipped == ["short"]


def test_sample_original_exact_fit():
    ds = Dataset(fps=10.0, tracks=[_track("exact", 30)])
    samples, skipped = sample_original(ds, t_window=30, stride=10)
    assert len(samples) == 1 and not skipped
    assert all(len(s) == 30 for s in samples)


def test_sample_original_windows_stay_inside_tracks():
    ds = Dataset(fps=10.0, tracks=[_track("a", 47), _track("b", 63)])
    samples, _ = sample_original(ds, t_window=30, stride=7)
    for s in samples:
        assert len(s) == 30
        track = ds.track(s.track_id)
        assert all(f in track.frames for f in (s.frames[0], s.frames[-1]))


def test_event_window_end_range():
    ds = Dataset(fps=30.0, tracks=[_track("c", 200, intent=1, cross_at=120)])
    for seed in range(30):
        samples = sample_event_to_crossing(ds, t_window=30, min_lead_s=1.0,
                                           max_lead_s=2.0, fps=30.0, seed=seed)
        assert len(samples) == 1
        end = samples[0].frames[-1].frame_index
        assert 60 <= end <= 90


def test_event_window_underflow_dropped():
    ds = Dataset(fps=30.0, tracks=[_track("c", 60, intent=1, cross_at=20)])
    samples = sample_event_to_crossing(ds, t_window=30, min_lead_s=1.0,
                                       max_lead_s=2.0, fps=30.0, seed=0)
    assert samples == []


def test_event_anchor_for_never_crossing_tracks():
    # verified against generator ground truth: non-crossing tracks anchor the
    # window at their final frame
    config = GeneratorConfig(tracks_train=6, tracks_val=0, tracks_test=0,
                             crosser_fraction=0.0, frames_per_track=60,
                             feature_dim=8)
    ds, _ = generate_synthetic(config, seed=5)
    samples = sample_event_to_crossing(ds, t_window=30, min_lead_s=1.0,
                                       max_lead_s=2.0, fps=ds.fps, seed=1)
    assert samples
    for s in samples:
        track = ds.track(s.track_id)
        event = len(track.frames) - 1
        lead = event - s.frames[-1].frame_index
        assert 10 <= lead <= 20  # 1-2 s at 10 fps


def test_balanced_sampler_rebalances_classes():
    tracks = [_track(f"p{i}", 30, intent=1, cross_at=25) for i in range(90)]
    tracks += [_track(f"n{i}", 30, intent=0) for i in range(10)]
    ds = Dataset(fps=10.0, tracks=tracks)
    samples, _ = sample_original(ds, t_window=30, stride=30)
    stream = balanced_sampler(samples, seed=99)
    draws = [next(stream).frames[-1].intent for _ in range(10_000)]
    neg_fraction = draws.count(0) / len(draws)
    assert abs(neg_fraction - 0.5) <= 0.03


def test_balanced_sampler_uniform_when_already_balanced():
    tracks = [_track(f"p{i}", 30, intent=1, cross_at=25) for i in range(5)]
    tracks += [_track(f"n{i}", 30, intent=0) for i in range(5)]
    samples, _ = sample_original(Dataset(10.0, tracks), t_window=30, stride=30)
    labels = np.array([s.frames[-1].intent for s in samples])
    counts = np.bincount(labels)
    weights = 1.0 / counts[labels]
    probs = weights / weights.sum()
    np.testing.assert_allclose(probs, 1.0 / len(samples))


def test_balanced_sampler_deterministic():
    tracks = [_track("p", 30, intent=1, cross_at=25), _track("n", 30, intent=0)]
    samples, _ = sample_original(Dataset(10.0, tracks), t_window=30, stride=30)
    s1 = balanced_sampler(samples, seed=7)
    s2 = balanced_sampler(samples, seed=7)
    assert [next(s1).track_id for _ in range(200)] == [next(s2).track_id for _ in range(200)]


def test_balanced_sampler_single_class_errors():
    samples, _ = sample_original(Dataset(10.0, [_track("n", 30, intent=0)]), 30, 30)
    with pytest.raises(ValueError, match="shuffling"):
        balanced_sampler(samples, seed=0)


def test_annotation_round_trip(tmp_path):
    config = GeneratorConfig(tracks_train=4, tracks_val=2, tracks_test=2,
                             frames_per_track=20, feature_dim=6)
    ds, feats = generate_synthetic(config, seed=3)
    p1 = tmp_path / "ann_1.jsonl"
    p2 = tmp_path / "ann_2.jsonl"
    write_annotations(ds, p1)
    loaded = load_annotations(p1)
    write_annotations(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.fps == ds.fps
    assert [t.track_id for t in loaded.tracks] == [t.track_id for t in ds.tracks]
    assert loaded.tracks[0].frames[3] == ds.tracks[0].frames[3]


def test_feature_round_trip(tmp_path):
    table = FeatureTable(4)
    rng = np.random.default_rng(0)
    for i in range(10):
        table.put(f"t/{i}", rng.normal(size=4).astype(np.float32))
    p1 = tmp_path / "f1.bin"
    p2 = tmp_path / "f2.bin"
    write_features(table, p1)
    loaded = load_features(p1)
    write_features(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    np.testing.assert_array_equal(loaded.get("t", 3), table.get("t", 3))


def test_loader_rejects_degenerate_box_with_line_number(tmp_path):
    ds = Dataset(10.0, [_track("a", 3)])
    path = tmp_path / "ann.jsonl"
    write_annotations(ds, path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace('"x1":10.0', '"x1":999.0')
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(AnnotationError, match="line 3"):
        load_annotations(path)


def test_loader_rejects_unknown_enum(tmp_path):
    ds = Dataset(10.0, [_track("a", 3)])
    path = tmp_path / "ann.jsonl"
    write_annotations(ds, path)
    text = path.read_text().replace('"other_walking"', '"moonwalking"', 1)
    path.write_text(text)
    with pytest.raises(AnnotationError, match="moonwalking"):
        load_annotations(path)


def test_loader_rejects_nonmonotone_frames(tmp_path):
    ds = Dataset(10.0, [_track("a", 3)])
    path = tmp_path / "ann.jsonl"
    write_annotations(ds, path)
    lines = path.read_text().splitlines()
    lines.append(lines[1])  # re-append frame 0 at the end of the track
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(AnnotationError, match="not increasing"):
        load_annotations(path)


def test_feature_table_rejects_wrong_length():
    table = FeatureTable(4)
    with pytest.raises(FeatureError, match="t/0"):
        table.put("t/0", np.zeros(5, dtype=np.float32))


def test_truncated_feature_file_names_key(tmp_path):
    table = FeatureTable(4)
    table.put("trk/0", np.ones(4, dtype=np.float32))
    path = tmp_path / "f.bin"
    write_features(table, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])  # drop one float from the record
    with pytest.raises(FeatureError, match="trk/0"):
        load_features(path)


def test_ego_and_boxes_validate():
    with pytest.raises(AnnotationError):
        BoundingBox(5.0, 0.0, 1.0, 10.0).validate()
    with pytest.raises(AnnotationError):
        EgoRecord(float("nan"), 0.0, 0.0, 0.0).validate()

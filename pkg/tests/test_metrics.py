import numpy as np
import pytest

from crosswatch.data import sample_original
from crosswatch.metrics import (
    EvalRecord,
    MetricsReport,
    action_map,
    auc,
    average_precision,
    build_report,
    confusion_counts,
    delta_s,
    evaluate,
    thresholded_scores,
)
from crosswatch.model import BehaviorModel, ModelConfig
from crosswatch.synthetic import GeneratorConfig, generate_synthetic


def _records(scores, labels):
    return [EvalRecord(intent_score=float(s), intent_label=int(y),
                       action_probs=None, action_label=0)
            for s, y in zip(scores, labels)]


def brute_force_auc(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    pos = scores[np.asarray(labels) == 1]
    neg = scores[np.asarray(labels) == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def brute_force_ap(scores, hits):
    """Direct precision-recall enumeration with all-points interpolation."""
    order = np.argsort(-np.asarray(scores), kind="mergesort")
    hits = np.asarray(hits, dtype=bool)[order]
    total_pos = hits.sum()
    points = []  # (recall, precision) at every rank
    tp = 0
    for i, h in enumerate(hits):
        tp += int(h)
        points.append((tp / total_pos, tp / (i + 1)))
    ap = 0.0
    prev_recall = 0.0
    for recall, _ in points:
        if recall > prev_recall:
            best = max(p for r, p in points if r >= recall)
            ap += (recall - prev_recall) * best
            prev_recall = recall
    return ap


def test_thresholded_prevalence_and_boundary():
    # constant 1.0 scores classify everything positive: accuracy == prevalence
    labels = [1] * 82 + [0] * 18
    m = thresholded_scores(_records([1.0] * 100, labels))
    assert m.accuracy == pytest.approx(0.82)
    m_all_pos = thresholded_scores(_records([1.0] * 10, [1] * 10))
    assert (m_all_pos.accuracy, m_all_pos.f1, m_all_pos.precision) == (1.0, 1.0, 1.0)
    # a score of exactly 0.5 is classified negative
    m_boundary = thresholded_scores(_records([0.5], [1]))
    assert m_boundary.accuracy == 0.0
    assert "precision_zero_denominator" in m_boundary.flags


def test_thresholded_perfect_scores():
    m = thresholded_scores(_records([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]))
    assert (m.accuracy, m.f1, m.precision) == (1.0, 1.0, 1.0)
    assert m.flags == []


def test_auc_constant_scores_is_half():
    assert auc(_records([0.7] * 50, [1] * 30 + [0] * 20)) == 0.5


def test_auc_perfect_separation_is_one():
    assert auc(_records([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])) == 1.0


def test_auc_matches_brute_force_on_random_fixtures():
    rng = np.random.default_rng(0)
    for _ in range(30):
        n = int(rng.integers(10, 200))
        scores = np.round(rng.random(n), 2)  # coarse grid forces ties
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        got = auc(_records(scores, labels))
        want = brute_force_auc(scores, labels)
        assert abs(got - want) < 1e-12


def test_auc_single_class_absent():
    assert auc(_records([0.4, 0.6], [1, 1])) is None


def test_auc_invariant_under_monotone_transforms():
    rng = np.random.default_rng(3)
    scores = rng.random(100)
    labels = rng.integers(0, 2, 100)
    labels[0], labels[1] = 0, 1
    base = auc(_records(scores, labels))
    squeezed = 1.0 / (1.0 + np.exp(-(5 * scores - 2)))
    assert auc(_records(squeezed, labels)) == base


def test_delta_s_fixture_and_extremes():
    assert delta_s(_records([0.9, 0.7, 0.2, 0.4], [1, 1, 0, 0])) == pytest.approx(0.5)
    assert delta_s(_records([0.6] * 4, [1, 1, 0, 0])) == 0.0
    assert delta_s(_records([1.0, 1.0, 0.0], [1, 1, 0])) == 1.0
    assert delta_s(_records([0.5], [1])) is None


def test_delta_s_shift_invariant_scale_equivariant():
    rng = np.random.default_rng(9)
    scores = rng.random(60) * 0.5
    labels = rng.integers(0, 2, 60)
    labels[:2] = [0, 1]
    base = delta_s(_records(scores, labels))
    shifted = delta_s(_records(scores + 0.2, labels))
    scaled = delta_s(_records(scores * 1.7, labels))
    assert shifted == pytest.approx(base, abs=1e-12)
    assert scaled == pytest.approx(1.7 * base, abs=1e-12)


def _action_records(probs, labels):
    return [EvalRecord(intent_score=None, intent_label=0,
                       action_probs=np.asarray(p, dtype=np.float64), action_label=int(y))
            for p, y in zip(probs, labels)]


def test_action_map_perfect_predictions():
    labels = [0, 1, 2, 3, 4, 5, 6] * 3
    probs = np.eye(7)[labels]
    map_value, per_class, excluded = action_map(_action_records(probs, labels))
    assert map_value == 1.0
    assert excluded == []
    assert all(ap == 1.0 for ap in per_class)


def test_action_map_uniform_predictions_near_prevalence():
    labels = list(range(7)) * 100
    probs = np.full((700, 7), 1.0 / 7)
    map_value, per_class, _ = action_map(_action_records(probs, labels))
    assert map_value == pytest.approx(1.0 / 7.0, abs=0.05)


def test_action_map_matches_brute_force_on_fixture():
    rng = np.random.default_rng(11)
    n = 50
    labels = rng.integers(0, 7, n)
    for c in range(7):
        labels[c] = c  # make every class present
    logits = rng.normal(size=(n, 7)) + 1.5 * np.eye(7)[labels]
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    map_value, per_class, excluded = action_map(_action_records(probs, labels))
    assert excluded == []
    for c in range(7):
        want = brute_force_ap(probs[:, c], labels == c)
        assert per_class[c] == pytest.approx(want, abs=1e-12)
    assert map_value == pytest.approx(np.mean([brute_force_ap(probs[:, c], labels == c)
                                               for c in range(7)]), abs=1e-12)


def test_action_map_excludes_absent_classes():
    labels = [0, 0, 1, 1]
    probs = np.eye(7)[labels]
    map_value, per_class, excluded = action_map(_action_records(probs, labels))
    assert excluded == [2, 3, 4, 5, 6]
    assert per_class[2] is None
    assert map_value == 1.0


def test_report_consistent_with_confusion_matrix():
    rng = np.random.default_rng(5)
    scores = rng.random(200)
    labels = rng.integers(0, 2, 200)
    labels[:2] = [0, 1]
    records = _records(scores, labels)
    tp, fp, tn, fn = confusion_counts(records)
    m = thresholded_scores(records)
    assert tp + fp + tn + fn == 200
    assert m.accuracy == pytest.approx((tp + tn) / 200)
    assert m.precision == pytest.approx(tp / (tp + fp))
    report = build_report(records, "original")
    assert report.pos == tp + fn and report.neg == fp + tn
    assert -1.0 <= report.delta_s <= 1.0 and 0.0 <= report.auc <= 1.0


GEN = GeneratorConfig(tracks_train=6, tracks_val=3, tracks_test=6,
                      frames_per_track=40, feature_dim=8)


def _tiny_model(ds, feats, seed=0):
    config = ModelConfig(visual_dim=feats.dim, hidden=8, visual_embed=8, box_embed=4,
                         relation_embed=4, attention_hidden=4, action_embed=4, horizon=2)
    return BehaviorModel.create(config, seed)


def test_evaluate_populates_report_and_is_deterministic():
    ds, feats = generate_synthetic(GEN, seed=1)
    model = _tiny_model(ds, feats)
    r1 = evaluate(model, ds, feats, setting="original")
    r2 = evaluate(model, ds, feats, setting="original")
    assert r1.to_json() == r2.to_json()
    assert r1.frames == sum(len(t.frames) for t in ds.tracks_for("test"))
    assert r1.accuracy is not None and r1.auc is not None and r1.action_map is not None
    assert r1.pos > 0 and r1.neg > 0

    r_event = evaluate(model, ds, feats, setting="event", t_window=20)
    assert r_event.frames > 0 and r_event.setting == "event"


def test_evaluate_event_setting_requires_crossings():
    config = GeneratorConfig(tracks_train=2, tracks_val=1, tracks_test=3,
                             frames_per_track=40, feature_dim=8, crosser_fraction=0.0)
    ds, feats = generate_synthetic(config, seed=2)
    model = _tiny_model(ds, feats)
    with pytest.raises(ValueError, match="crossing event"):
        evaluate(model, ds, feats, setting="event")


def test_untrained_model_auc_near_chance():
    # null-model calibration: random weights should hover around 0.5
    ds, feats = generate_synthetic(GeneratorConfig(tracks_train=2, tracks_val=1, tracks_test=16,
                                                   frames_per_track=40, feature_dim=8), seed=3)
    aucs = []
    for seed in range(5):
        model = _tiny_model(ds, feats, seed=seed)
        aucs.append(evaluate(model, ds, feats, setting="original").auc)
    assert 0.35 <= float(np.median(aucs)) <= 0.65


def test_csv_row_matches_header():
    ds, feats = generate_synthetic(GEN, seed=1)
    report = evaluate(_tiny_model(ds, feats), ds, feats)
    header = MetricsReport.csv_header().split(",")
    row = report.to_csv_row().split(",")
    assert len(header) == len(row)
    assert header[0] == "setting" and row[0] == "original"

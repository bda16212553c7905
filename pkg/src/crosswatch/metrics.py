"""Evaluation suite: thresholded scores, rank AUC, score margin, action mAP.

All intent metrics run over per-frame records pooled across a split.  The
hard threshold is strictly greater than 0.5; AUC counts tied pairs as half;
average precision uses all-points interpolation, macro-averaged over the
action classes present in the ground truth.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import (
    ACTION_INDEX,
    CrossingPhase,
    Dataset,
    NUM_ACTIONS,
    SequenceSample,
    sample_event_to_crossing,
)


@dataclass
class EvalRecord:
    intent_score: float | None
    intent_label: int
    action_probs: np.ndarray | None
    action_label: int


@dataclass
class ThresholdMetrics:
    accuracy: float
    f1: float
    precision: float
    flags: list[str] = field(default_factory=list)


def _intent_arrays(records: list[EvalRecord]):
    pairs = [(r.intent_score, r.intent_label) for r in records if r.intent_score is not None]
    if not pairs:
        return np.zeros(0), np.zeros(0, dtype=int)
    scores, labels = zip(*pairs)
    return np.asarray(scores, dtype=np.float64), np.asarray(labels, dtype=int)


def confusion_counts(records: list[EvalRecord]):
    """(tp, fp, tn, fn) under the strict score > 0.5 rule."""
    scores, labels = _intent_arrays(records)
    predicted = scores > 0.5
    tp = int(np.sum(predicted & (labels == 1)))
    fp = int(np.sum(predicted & (labels == 0)))
    tn = int(np.sum(~predicted & (labels == 0)))
    fn = int(np.sum(~predicted & (labels == 1)))
    return tp, fp, tn, fn


def thresholded_scores(records: list[EvalRecord]) -> ThresholdMetrics:
    """Accuracy, F1 and precision at the hard 0.5 threshold."""
    if not records:
        raise ValueError("no records")
    tp, fp, tn, fn = confusion_counts(records)
    total = tp + fp + tn + fn
    flags = []
    accuracy = (tp + tn) / total
    if tp + fp == 0:
        precision = 0.0
        flags.append("precision_zero_denominator")
    else:
        precision = tp / (tp + fp)
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    if precision + recall == 0.0:
        f1 = 0.0
        flags.append("f1_zero_denominator")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return ThresholdMetrics(accuracy=accuracy, f1=f1, precision=precision, flags=flags)


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # 1-based midrank
        i = j + 1
    return ranks


def auc(records: list[EvalRecord]) -> float | None:
    """Pairwise ranking statistic: P(score_pos > score_neg), ties half credit.

    Returns None when one of the classes is absent.
    """
    scores, labels = _intent_arrays(records)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _midranks(scores)
    rank_sum = float(np.sum(ranks[labels == 1]))
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def delta_s(records: list[EvalRecord]) -> float | None:
    """Mean positive score minus mean negative score; None if one class absent."""
    scores, labels = _intent_arrays(records)
    if np.sum(labels == 1) == 0 or np.sum(labels == 0) == 0:
        return None
    return float(scores[labels == 1].mean() - scores[labels == 0].mean())


def average_precision(scores: np.ndarray, hits: np.ndarray) -> float:
    """All-points interpolated average precision for one ranked class."""
    order = np.argsort(-scores, kind="mergesort")
    hits = hits[order].astype(bool)
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    interpolated = np.maximum.accumulate(precision[::-1])[::-1]
    return float(interpolated[hits].sum() / hits.sum())


def action_map(records: list[EvalRecord]):
    """(macro mAP, per-class AP list, excluded class indices).

    Classes with no ground-truth instances are excluded from the mean and
    reported; their per-class entry is None.
    """
    rows = [(r.action_probs, r.action_label) for r in records if r.action_probs is not None]
    if not rows:
        return None, [None] * NUM_ACTIONS, list(range(NUM_ACTIONS))
    probs = np.stack([p for p, _ in rows])
    labels = np.array([label for _, label in rows])
    per_class: list[float | None] = []
    excluded = []
    for c in range(NUM_ACTIONS):
        hits = labels == c
        if not hits.any():
            per_class.append(None)
            excluded.append(c)
            continue
        per_class.append(average_precision(probs[:, c], hits))
    present = [ap for ap in per_class if ap is not None]
    return float(np.mean(present)), per_class, excluded


@dataclass
class MetricsReport:
    setting: str
    frames: int
    pos: int
    neg: int
    accuracy: float | None
    f1: float | None
    precision: float | None
    auc: float | None
    delta_s: float | None
    action_map: float | None
    per_class_ap: list
    excluded_classes: list
    flags: list
    metadata: dict

    def to_json(self) -> str:
        raw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return json.dumps(raw, sort_keys=True, indent=2)

    CSV_FIELDS = ("setting", "frames", "pos", "neg", "accuracy", "f1", "precision",
                  "auc", "delta_s", "action_map")

    def to_csv_row(self) -> str:
        cells = []
        for name in self.CSV_FIELDS:
            value = getattr(self, name)
            cells.append("" if value is None else (repr(value) if isinstance(value, float) else str(value)))
        return ",".join(cells)

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.CSV_FIELDS)


def records_from_outputs(outputs, sample: SequenceSample) -> list[EvalRecord]:
    records = []
    for out, frame in zip(outputs, sample.frames):
        records.append(EvalRecord(
            intent_score=out.intent_score,
            intent_label=frame.intent,
            action_probs=out.action_dist,
            action_label=ACTION_INDEX[frame.semantic_action],
        ))
    return records


def evaluation_sequences(dataset: Dataset, setting: str, split: str = "test",
                         t_window: int = 30, seed: int = 0) -> list[SequenceSample]:
    """Sequences to score: whole tracks (original) or event-anchored windows."""
    tracks = dataset.tracks_for(split)
    if not tracks:
        raise ValueError(f"dataset has no {split!r} split")
    if setting == "original":
        return [SequenceSample(t.track_id, t.frames, t.split) for t in tracks]
    if setting == "event":
        has_event = any(f.crossing_phase is CrossingPhase.CROSSING
                        for t in tracks for f in t.frames)
        if not has_event:
            raise ValueError("event setting needs at least one crossing event in the split")
        return sample_event_to_crossing(dataset, t_window, 1.0, 2.0, dataset.fps,
                                        seed=seed, split=split)
    raise ValueError(f"unknown setting {setting!r}; expected 'original' or 'event'")


def thread_cap() -> int:
    """Read-only parallelism limit, from the CROSSWATCH_THREADS environment."""
    raw = os.environ.get("CROSSWATCH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def evaluate(model, dataset: Dataset, features, setting: str = "original",
             split: str = "test", t_window: int = 30, seed: int = 0,
             max_workers: int | None = None) -> MetricsReport:
    """Score a checkpoint on a split, one sequence at a time, pooled per frame.

    Sequences are independent, so they may be forwarded by up to
    CROSSWATCH_THREADS worker threads sharing the read-only parameters;
    records are always collected in sequence order.
    """
    from .model import BehaviorModel, load_checkpoint

    if not isinstance(model, BehaviorModel):
        model = load_checkpoint(model)
    sequences = evaluation_sequences(dataset, setting, split, t_window, seed)
    if max_workers is None:
        max_workers = thread_cap()
    if max_workers > 1 and len(sequences) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            all_outputs = list(pool.map(lambda s: model.forward_sequence(s, features), sequences))
    else:
        all_outputs = [model.forward_sequence(s, features) for s in sequences]
    records: list[EvalRecord] = []
    for sample, outputs in zip(sequences, all_outputs):
        records.extend(records_from_outputs(outputs, sample))
    return build_report(records, setting)


def build_report(records: list[EvalRecord], setting: str) -> MetricsReport:
    if not records:
        raise ValueError("no evaluation records")
    scores, labels = _intent_arrays(records)
    has_intent = len(scores) > 0
    flags = []
    if has_intent:
        thresholded = thresholded_scores(records)
        flags.extend(thresholded.flags)
        auc_value = auc(records)
        margin = delta_s(records)
        if auc_value is None:
            flags.append("auc_undefined_single_class")
        pos, neg = int(np.sum(labels == 1)), int(np.sum(labels == 0))
    else:
        thresholded = None
        auc_value = margin = None
        pos = sum(r.intent_label == 1 for r in records)
        neg = len(records) - pos
    map_value, per_class, excluded = action_map(records)
    return MetricsReport(
        setting=setting,
        frames=len(records),
        pos=pos,
        neg=neg,
        accuracy=thresholded.accuracy if thresholded else None,
        f1=thresholded.f1 if thresholded else None,
        precision=thresholded.precision if thresholded else None,
        auc=auc_value,
        delta_s=margin,
        action_map=map_value,
        per_class_ap=per_class,
        excluded_classes=excluded,
        flags=flags,
        metadata={"threshold": 0.5, "tie_policy": "half_credit",
                  "ap_interpolation": "all_points"},
    )

"""Annotation schema, action-label augmentation, sequence sampling and file io.

Annotations travel as newline-delimited JSON (one frame per line) behind a
header line carrying the schema version, fps and the split manifests.
Visual features travel as a binary table keyed by "track_id/frame_index".
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SCHEMA_VERSION = "crosswatch-ann-1"
FEATURE_MAGIC = b"PEDFEAT1"
SPLITS = ("train", "val", "test")


class AnnotationError(ValueError):
    """Malformed or invariant-violating annotation input."""


class FeatureError(ValueError):
    """Malformed feature file or feature record."""


class BaseAction(Enum):
    STANDING = "standing"
    WALKING = "walking"


class CrossingPhase(Enum):
    PRE = "pre"
    CROSSING = "crossing"
    CROSSED = "crossed"


class SemanticAction(Enum):
    STANDING = "standing"
    WAITING = "waiting"
    GOING_TOWARDS = "going_towards"
    CROSSING = "crossing"
    CROSSED_AND_STANDING = "crossed_and_standing"
    CROSSED_AND_WALKING = "crossed_and_walking"
    OTHER_WALKING = "other_walking"


ACTION_CLASSES = list(SemanticAction)
ACTION_INDEX = {a: i for i, a in enumerate(ACTION_CLASSES)}
NUM_ACTIONS = len(ACTION_CLASSES)


class ObjectType(Enum):
    NEIGHBOR = "neighbor"
    TRAFFIC_LIGHT = "traffic_light"
    TRAFFIC_SIGN = "traffic_sign"
    CROSSWALK = "crosswalk"
    STATION = "station"


class LightType(Enum):
    GENERAL = "general"
    PEDESTRIAN = "pedestrian"


class LightState(Enum):
    GREEN = "green"
    YELLOW = "yellow"
    RED = "red"


class SignType(Enum):
    STOP = "stop"
    CROSSWALK = "crosswalk"
    YIELD = "yield"
    SPEED = "speed"
    OTHER = "other"


@dataclass
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def validate(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise AnnotationError(f"degenerate box: ({self.x1},{self.y1},{self.x2},{self.y2})")

    @property
    def center(self):
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    @property
    def bottom_center(self):
        return (self.x1 + self.x2) / 2.0, self.y2

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    def as_array(self):
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)


@dataclass
class TrafficObjectRecord:
    object_type: ObjectType
    box: BoundingBox
    light_type: LightType | None = None
    light_state: LightState | None = None
    sign_type: SignType | None = None

    def validate(self):
        self.box.validate()
        is_light = self.object_type is ObjectType.TRAFFIC_LIGHT
        is_sign = self.object_type is ObjectType.TRAFFIC_SIGN
        if is_light != (self.light_type is not None and self.light_state is not None):
            raise AnnotationError(f"{self.object_type.value}: light fields present iff traffic_light")
        if not is_light and (self.light_type is not None or self.light_state is not None):
            raise AnnotationError(f"{self.object_type.value}: unexpected light fields")
        if is_sign != (self.sign_type is not None):
            raise AnnotationError(f"{self.object_type.value}: sign_type present iff traffic_sign")


@dataclass
class EgoRecord:
    v: float
    a: float
    v_yaw: float
    a_yaw: float

    def validate(self):
        if not all(np.isfinite(x) for x in (self.v, self.a, self.v_yaw, self.a_yaw)):
            raise AnnotationError("non-finite ego record")

    def as_array(self):
        return np.array([self.v, self.a, self.v_yaw, self.a_yaw], dtype=np.float64)


@dataclass
class FrameAnnotation:
    frame_index: int
    box: BoundingBox
    base_action: BaseAction
    intent: int
    crossing_phase: CrossingPhase
    semantic_action: SemanticAction
    objects: list[TrafficObjectRecord] = field(default_factory=list)
    ego: EgoRecord = field(default_factory=lambda: EgoRecord(0.0, 0.0, 0.0, 0.0))
    visual_feature_key: str = ""

    def validate(self):
        if self.intent not in (0, 1):
            raise AnnotationError(f"intent must be 0 or 1, got {self.intent!r}")
        self.box.validate()
        self.ego.validate()
        for obj in self.objects:
            obj.validate()
        expected = augment_actions(self.base_action, self.intent, self.crossing_phase)
        if self.semantic_action is not expected:
            raise AnnotationError(
                f"semantic_action {self.semantic_action.value!r} inconsistent with "
                f"({self.base_action.value}, intent={self.intent}, {self.crossing_phase.value}); "
                f"expected {expected.value!r}"
            )


@dataclass
class Track:
    track_id: str
    split: str
    frames: list[FrameAnnotation]

    def __len__(self):
        return len(self.frames)


@dataclass
class Dataset:
    fps: float
    tracks: list[Track]

    def tracks_for(self, split: str) -> list[Track]:
        return [t for t in self.tracks if t.split == split]

    def track(self, track_id: str) -> Track:
        for t in self.tracks:
            if t.track_id == track_id:
                return t
        raise KeyError(f"unknown track {track_id!r}")


@dataclass
class SequenceSample:
    """One pedestrian track window used for training or evaluation."""

    track_id: str
    frames: list[FrameAnnotation]
    split: str

    def __len__(self):
        return len(self.frames)


def augment_actions(base_action: BaseAction, intent: int, crossing_phase: CrossingPhase) -> SemanticAction:
    """Map the two base actions onto the seven crossing-aware classes.

    Total over all 2 x 2 x 3 inputs: the crossing phase decides the coarse
    stage; intent splits the pre-crossing stage into waiting/going-towards
    versus plain standing/walking.
    """
    if crossing_phase is CrossingPhase.CROSSING:
        return SemanticAction.CROSSING
    if crossing_phase is CrossingPhase.CROSSED:
        if base_action is BaseAction.STANDING:
            return SemanticAction.CROSSED_AND_STANDING
        return SemanticAction.CROSSED_AND_WALKING
    if base_action is BaseAction.STANDING:
        return SemanticAction.WAITING if intent else SemanticAction.STANDING
    return SemanticAction.GOING_TOWARDS if intent else SemanticAction.OTHER_WALKING


# ---------------------------------------------------------------------------
# sequence sampling
# ---------------------------------------------------------------------------

def sample_original(dataset: Dataset, t_window: int, stride: int, split: str | None = None):
    """Overlapping fixed-length windows over every track, partial tails dropped.

    Returns (samples, skipped_track_ids); a track shorter than t_window yields
    no windows and is reported as skipped.
    """
    if t_window < 2:
        raise ValueError("t_window must be >= 2")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    tracks = dataset.tracks if split is None else dataset.tracks_for(split)
    samples, skipped = [], []
    for track in tracks:
        n = len(track.frames)
        if n < t_window:
            skipped.append(track.track_id)
            continue
        for start in range(0, n - t_window + 1, stride):
            samples.append(SequenceSample(track.track_id, track.frames[start:start + t_window], track.split))
    return samples, skipped


def crossing_event_position(track: Track) -> int:
    """Position of the first crossing frame, or the last position if none."""
    for i, f in enumerate(track.frames):
        if f.crossing_phase is CrossingPhase.CROSSING:
            return i
    return len(track.frames) - 1


def sample_event_to_crossing(dataset: Dataset, t_window: int, min_lead_s: float,
                             max_lead_s: float, fps: float, seed: int = 0,
                             split: str | None = None):
    """One window per track, ending a random lead time before its crossing event.

    The lead is drawn uniformly from [min_lead_s * fps, max_lead_s * fps]
    frames; windows that would start before the track does are dropped.
    Tracks without a crossing event anchor at their final frame.
    """
    if not (0 < min_lead_s < max_lead_s):
        raise ValueError("need 0 < min_lead_s < max_lead_s")
    if fps <= 0:
        raise ValueError("fps must be positive")
    rng = np.random.default_rng(seed)
    tracks = dataset.tracks if split is None else dataset.tracks_for(split)
    lo, hi = int(round(min_lead_s * fps)), int(round(max_lead_s * fps))
    samples = []
    for track in tracks:
        event = crossing_event_position(track)
        lead = int(rng.integers(lo, hi + 1))
        end = event - lead  # inclusive last window position
        start = end - t_window + 1
        if start < 0:
            continue
        samples.append(SequenceSample(track.track_id, track.frames[start:end + 1], track.split))
    return samples


def balanced_sampler(samples: list[SequenceSample], seed: int):
    """Infinite stream of samples, classes balanced by final-frame intent.

    Each sample is drawn with probability inversely proportional to the
    frequency of its final-frame intent label, so both intent classes appear
    equally often in expectation.
    """
    if not samples:
        raise ValueError("no samples to draw from")
    labels = np.array([s.frames[-1].intent for s in samples])
    counts = np.bincount(labels, minlength=2)
    if counts[0] == 0 or counts[1] == 0:
        raise ValueError("all samples share one intent class; use plain shuffling instead")
    weights = 1.0 / counts[labels]
    probs = weights / weights.sum()
    rng = np.random.default_rng(seed)

    def stream():
        while True:
            yield samples[int(rng.choice(len(samples), p=probs))]

    return stream()


# ---------------------------------------------------------------------------
# visual features
# ---------------------------------------------------------------------------

class FeatureTable:
    """In-memory feature provider mapping "track_id/frame_index" to a vector."""

    def __init__(self, dim: int, table: dict[str, np.ndarray] | None = None):
        if dim < 1:
            raise FeatureError(f"feature dim must be >= 1, got {dim}")
        self.dim = dim
        self._table: dict[str, np.ndarray] = {}
        for key, vec in (table or {}).items():
            self.put(key, vec)

    @staticmethod
    def key_for(track_id: str, frame_index: int) -> str:
        return f"{track_id}/{frame_index}"

    def put(self, key: str, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise FeatureError(f"feature {key!r} has length {vec.shape}, expected ({self.dim},)")
        self._table[key] = vec

    def get(self, track_id: str, frame_index: int) -> np.ndarray:
        key = self.key_for(track_id, frame_index)
        try:
            return self._table[key]
        except KeyError:
            raise KeyError(f"missing visual feature for {key!r}") from None

    def __len__(self):
        return len(self._table)

    def items(self):
        return self._table.items()


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _box_to_json(box: BoundingBox):
    return {"x1": box.x1, "y1": box.y1, "x2": box.x2, "y2": box.y2}


def _frame_to_json(track_id: str, frame: FrameAnnotation):
    objects = []
    for o in frame.objects:
        rec = {"object_type": o.object_type.value, "box": _box_to_json(o.box)}
        if o.light_type is not None:
            rec["light_type"] = o.light_type.value
        if o.light_state is not None:
            rec["light_state"] = o.light_state.value
        if o.sign_type is not None:
            rec["sign_type"] = o.sign_type.value
        objects.append(rec)
    return {
        "track_id": track_id,
        "frame_index": frame.frame_index,
        "box": _box_to_json(frame.box),
        "base_action": frame.base_action.value,
        "intent": frame.intent,
        "crossing_phase": frame.crossing_phase.value,
        "semantic_action": frame.semantic_action.value,
        "objects": objects,
        "ego": {"v": frame.ego.v, "a": frame.ego.a, "v_yaw": frame.ego.v_yaw, "a_yaw": frame.ego.a_yaw},
        "visual_feature_key": frame.visual_feature_key,
    }


def write_annotations(dataset: Dataset, path):
    splits = {s: [t.track_id for t in dataset.tracks if t.split == s] for s in SPLITS}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_canonical({"schema": SCHEMA_VERSION, "fps": dataset.fps, "splits": splits}) + "\n")
        for track in dataset.tracks:
            for frame in track.frames:
                fh.write(_canonical(_frame_to_json(track.track_id, frame)) + "\n")


def _parse_enum(enum_cls, raw, line_no, what):
    try:
        return enum_cls(raw)
    except ValueError:
        raise AnnotationError(f"line {line_no}: unknown {what} {raw!r}") from None


def _parse_box(raw, line_no) -> BoundingBox:
    try:
        return BoundingBox(float(raw["x1"]), float(raw["y1"]), float(raw["x2"]), float(raw["y2"]))
    except (KeyError, TypeError) as exc:
        raise AnnotationError(f"line {line_no}: malformed box: {exc}") from None


def _parse_object(raw, line_no) -> TrafficObjectRecord:
    obj_type = _parse_enum(ObjectType, raw.get("object_type"), line_no, "object_type")
    rec = TrafficObjectRecord(
        object_type=obj_type,
        box=_parse_box(raw.get("box", {}), line_no),
        light_type=_parse_enum(LightType, raw["light_type"], line_no, "light_type") if "light_type" in raw else None,
        light_state=_parse_enum(LightState, raw["light_state"], line_no, "light_state") if "light_state" in raw else None,
        sign_type=_parse_enum(SignType, raw["sign_type"], line_no, "sign_type") if "sign_type" in raw else None,
    )
    return rec


def load_annotations(path) -> Dataset:
    """Parse and fully validate an annotation file; errors carry line numbers."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise AnnotationError("line 1: empty annotation file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"line 1: invalid header: {exc}") from None
    if header.get("schema") != SCHEMA_VERSION:
        raise AnnotationError(f"line 1: unsupported schema {header.get('schema')!r}")
    fps = float(header.get("fps", 0))
    if fps <= 0:
        raise AnnotationError("line 1: fps must be positive")
    split_of = {}
    for split, ids in header.get("splits", {}).items():
        if split not in SPLITS:
            raise AnnotationError(f"line 1: unknown split {split!r}")
        for tid in ids:
            if tid in split_of:
                raise AnnotationError(f"line 1: track {tid!r} listed in multiple splits")
            split_of[tid] = split

    frames_by_track: dict[str, list[FrameAnnotation]] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"line {line_no}: invalid record: {exc}") from None
        try:
            track_id = raw["track_id"]
            frame = FrameAnnotation(
                frame_index=int(raw["frame_index"]),
                box=_parse_box(raw["box"], line_no),
                base_action=_parse_enum(BaseAction, raw["base_action"], line_no, "base_action"),
                intent=int(raw["intent"]),
                crossing_phase=_parse_enum(CrossingPhase, raw["crossing_phase"], line_no, "crossing_phase"),
                semantic_action=_parse_enum(SemanticAction, raw["semantic_action"], line_no, "semantic_action"),
                objects=[_parse_object(o, line_no) for o in raw.get("objects", [])],
                ego=EgoRecord(float(raw["ego"]["v"]), float(raw["ego"]["a"]),
                              float(raw["ego"]["v_yaw"]), float(raw["ego"]["a_yaw"])),
                visual_feature_key=raw.get("visual_feature_key", ""),
            )
        except AnnotationError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"line {line_no}: malformed record: {exc}") from None
        try:
            frame.validate()
        except AnnotationError as exc:
            raise AnnotationError(f"line {line_no}: {exc}") from None
        if track_id not in split_of:
            raise AnnotationError(f"line {line_no}: track {track_id!r} missing from split manifests")
        bucket = frames_by_track.setdefault(track_id, [])
        if bucket and frame.frame_index <= bucket[-1].frame_index:
            raise AnnotationError(
                f"line {line_no}: frame_index {frame.frame_index} not increasing within track {track_id!r}"
            )
        bucket.append(frame)

    missing = [tid for tid in split_of if tid not in frames_by_track]
    if missing:
        raise AnnotationError(f"tracks listed in splits but absent from body: {missing}")
    tracks = [Track(tid, split_of[tid], frames) for tid, frames in frames_by_track.items()]
    return Dataset(fps=fps, tracks=tracks)


def write_features(table: FeatureTable, path):
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", table.dim))
        for key, vec in table.items():
            raw = key.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(vec.astype("<f4").tobytes())


def load_features(path) -> FeatureTable:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != FEATURE_MAGIC:
        raise FeatureError(f"bad magic {blob[:8]!r}; not a feature file")
    if len(blob) < 12:
        raise FeatureError("truncated feature header")
    dim = struct.unpack("<I", blob[8:12])[0]
    table = FeatureTable(dim)
    pos = 12
    while pos < len(blob):
        if pos + 4 > len(blob):
            raise FeatureError(f"truncated record header at byte {pos}")
        klen = struct.unpack("<I", blob[pos:pos + 4])[0]
        pos += 4
        key = blob[pos:pos + klen].decode("utf-8")
        pos += klen
        end = pos + 4 * dim
        if end > len(blob):
            raise FeatureError(f"feature {key!r}: record shorter than dim {dim}")
        table.put(key, np.frombuffer(blob[pos:end], dtype="<f4"))
        pos = end
    return table

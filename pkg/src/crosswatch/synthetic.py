"""Synthetic desk-scale scenario generator.

Each track follows a scripted behavior over the seven action classes; boxes
move piecewise-linearly in a pixel image plane, crossers get a crosswalk and
traffic light placed ahead of them, and per-frame visual features are drawn
from per-class Gaussians whose means sit on seeded orthonormal directions, so
the task is learnable but not separable from a single frame.

Generation is deterministic per seed: every track draws from its own stream
derived as seed XOR global track index, so per-track work could run in any
order (or in parallel) without changing the output.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .data import (
    BaseAction,
    BoundingBox,
    CrossingPhase,
    Dataset,
    EgoRecord,
    FeatureTable,
    FrameAnnotation,
    LightState,
    LightType,
    ObjectType,
    SemanticAction,
    SignType,
    Track,
    TrafficObjectRecord,
    augment_actions,
    ACTION_INDEX,
    NUM_ACTIONS,
)


@dataclass
class GeneratorConfig:
    tracks_train: int = 200
    tracks_val: int = 40
    tracks_test: int = 40
    frames_per_track: int = 60
    feature_dim: int = 64
    noise_sigma: float = 1.0
    fps: float = 10.0
    crosser_fraction: float = 0.5
    neighbors_max: int = 3
    sign_probability: float = 0.25
    image_width: float = 1920.0
    image_height: float = 1080.0
    # anchor directions for the five motion regimes sit this many sigmas from
    # the origin; the intent-critical pairs (standing vs waiting, other
    # walking vs going towards) share an anchor and differ only by a subtle
    # offset, so single frames do not give intent away
    class_mean_scale: float = 2.8
    subtle_offset: float = 0.35

    def validate(self):
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.feature_dim < 2:
            raise ValueError(f"feature_dim must be >= 2, got {self.feature_dim}")
        if self.frames_per_track < 10:
            raise ValueError("frames_per_track must be >= 10")
        if min(self.tracks_train, self.tracks_val, self.tracks_test) < 0:
            raise ValueError("track counts must be >= 0")
        if not 0.0 <= self.crosser_fraction <= 1.0:
            raise ValueError("crosser_fraction must be in [0, 1]")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.image_width < 640 or self.image_height < 480:
            # object placement offsets assume at least a VGA-sized frame
            raise ValueError("image must be at least 640 x 480")

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, raw: dict) -> "GeneratorConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**raw)


def class_means(config: GeneratorConfig, seed: int) -> np.ndarray:
    """Seeded per-action feature means of shape (num_actions, feature_dim).

    Five orthonormal anchor directions carry the motion regimes (stationary,
    walking, crossing, crossed-stationary, crossed-walking).  Within the
    stationary and walking anchors, the intent-positive class sits a subtle
    offset away from the intent-negative one along its own orthogonal
    direction, so telling waiting from standing (or going-towards from other
    walking) takes evidence accumulated over time.  In tiny feature spaces
    (below 7 dims) means fall back to random unit directions.
    """
    rng = np.random.default_rng([seed, 0xFEA7])
    gauss = rng.normal(size=(config.feature_dim, NUM_ACTIONS))
    if config.feature_dim < NUM_ACTIONS:
        directions = gauss.T / np.linalg.norm(gauss.T, axis=1, keepdims=True)
        return config.class_mean_scale * directions
    q, _ = np.linalg.qr(gauss)
    anchors = config.class_mean_scale * q.T[:5]
    subtle = config.subtle_offset * q.T[5:7]
    means = np.zeros((NUM_ACTIONS, config.feature_dim))
    means[ACTION_INDEX[SemanticAction.STANDING]] = anchors[0] - subtle[0]
    means[ACTION_INDEX[SemanticAction.WAITING]] = anchors[0] + subtle[0]
    means[ACTION_INDEX[SemanticAction.OTHER_WALKING]] = anchors[1] - subtle[1]
    means[ACTION_INDEX[SemanticAction.GOING_TOWARDS]] = anchors[1] + subtle[1]
    means[ACTION_INDEX[SemanticAction.CROSSING]] = anchors[2]
    means[ACTION_INDEX[SemanticAction.CROSSED_AND_STANDING]] = anchors[3]
    means[ACTION_INDEX[SemanticAction.CROSSED_AND_WALKING]] = anchors[4]
    return means


def _smooth(values: np.ndarray, width: int) -> np.ndarray:
    kernel = np.ones(width) / width
    return np.convolve(values, kernel, mode="same")


def _ego_profile(rng: np.random.Generator, n: int, fps: float):
    accel = _smooth(rng.normal(0.0, 0.8, n), 5)
    v = np.clip(rng.uniform(2.0, 12.0) + np.cumsum(accel) / fps, 0.0, None)
    a = np.gradient(v) * fps
    yaw_rate = _smooth(rng.normal(0.0, 0.02, n), 7)
    yaw_accel = np.gradient(yaw_rate) * fps
    return v, a, yaw_rate, yaw_accel


def _script_crosser(rng: np.random.Generator, n: int):
    """Action script for a crossing pedestrian: wait, approach, cross, done."""
    event = int(rng.integers(int(0.70 * n), int(0.88 * n) + 1))
    cross_len = int(rng.integers(6, 11))
    cross_end = min(event + cross_len, n)
    wait_len = 0 if rng.random() < 0.25 else int(rng.integers(int(0.25 * event), int(0.70 * event) + 1))
    crossed_standing = rng.random() < 0.4
    base, phase = [], []
    for t in range(n):
        if t < wait_len:
            base.append(BaseAction.STANDING)
            phase.append(CrossingPhase.PRE)
        elif t < event:
            base.append(BaseAction.WALKING)
            phase.append(CrossingPhase.PRE)
        elif t < cross_end:
            base.append(BaseAction.WALKING)
            phase.append(CrossingPhase.CROSSING)
        else:
            base.append(BaseAction.STANDING if crossed_standing else BaseAction.WALKING)
            phase.append(CrossingPhase.CROSSED)
    return base, phase, event


def _script_non_crosser(rng: np.random.Generator, n: int):
    """Alternating standing / walking segments, never entering a crossing."""
    base, phase = [], []
    standing = bool(rng.random() < 0.5)
    t = 0
    while t < n:
        seg = int(rng.integers(8, 26))
        for _ in range(min(seg, n - t)):
            base.append(BaseAction.STANDING if standing else BaseAction.WALKING)
            phase.append(CrossingPhase.PRE)
        t += seg
        standing = not standing
    return base, phase, None


def _make_track(track_id: str, split: str, is_crosser: bool, config: GeneratorConfig,
                seed: int, global_index: int, means: np.ndarray, features: FeatureTable):
    rng = np.random.default_rng(seed ^ global_index)
    n = config.frames_per_track
    w_img, h_img = config.image_width, config.image_height
    intent = 1 if is_crosser else 0

    if is_crosser:
        base, phase, event = _script_crosser(rng, n)
    else:
        base, phase, event = _script_non_crosser(rng, n)

    ped_w = rng.uniform(35.0, 70.0)
    ped_h = rng.uniform(110.0, 190.0)
    cx = rng.uniform(0.15, 0.85) * w_img
    cy = rng.uniform(0.45, 0.80) * h_img
    speed = rng.uniform(4.0, 9.0)
    heading = 1.0 if rng.random() < 0.5 else -1.0

    # static scene objects
    static_objects = []
    crosswalk_center = None
    if is_crosser:
        cw_cx = np.clip(cx + heading * rng.uniform(150.0, 400.0), 150.0, w_img - 150.0)
        cw_cy = np.clip(cy + rng.uniform(0.0, 60.0), 100.0, h_img - 50.0)
        cw_w, cw_h = rng.uniform(180.0, 300.0), rng.uniform(40.0, 80.0)
        crosswalk_center = (cw_cx, cw_cy)
        static_objects.append(TrafficObjectRecord(
            ObjectType.CROSSWALK,
            BoundingBox(cw_cx - cw_w / 2, cw_cy - cw_h / 2, cw_cx + cw_w / 2, cw_cy + cw_h / 2),
        ))
        tl_w, tl_h = rng.uniform(18.0, 30.0), rng.uniform(40.0, 60.0)
        tl_cx = np.clip(cw_cx + rng.uniform(-60.0, 60.0), 20.0, w_img - 20.0)
        tl_cy = max(cw_cy - rng.uniform(250.0, 450.0), tl_h)
        static_objects.append(TrafficObjectRecord(
            ObjectType.TRAFFIC_LIGHT,
            BoundingBox(tl_cx - tl_w / 2, tl_cy - tl_h / 2, tl_cx + tl_w / 2, tl_cy + tl_h / 2),
            light_type=LightType(rng.choice([lt.value for lt in LightType])),
            light_state=LightState(rng.choice([ls.value for ls in LightState])),
        ))
        if rng.random() < config.sign_probability:
            s_w = rng.uniform(25.0, 45.0)
            static_objects.append(TrafficObjectRecord(
                ObjectType.TRAFFIC_SIGN,
                BoundingBox(tl_cx - s_w / 2, tl_cy + 20.0, tl_cx + s_w / 2, tl_cy + 20.0 + s_w),
                sign_type=SignType.CROSSWALK,
            ))
    elif rng.random() < config.sign_probability:
        s_w = rng.uniform(25.0, 45.0)
        s_cx = rng.uniform(100.0, w_img - 100.0)
        s_cy = rng.uniform(100.0, 500.0)
        static_objects.append(TrafficObjectRecord(
            ObjectType.TRAFFIC_SIGN,
            BoundingBox(s_cx - s_w / 2, s_cy - s_w / 2, s_cx + s_w / 2, s_cy + s_w / 2),
            sign_type=SignType(rng.choice([SignType.STOP.value, SignType.YIELD.value,
                                           SignType.SPEED.value, SignType.OTHER.value])),
        ))

    st_w, st_h = rng.uniform(80.0, 160.0), rng.uniform(60.0, 120.0)
    st_cx = rng.uniform(st_w, w_img - st_w)
    st_cy = rng.uniform(st_h, h_img - st_h)
    static_objects.append(TrafficObjectRecord(
        ObjectType.STATION,
        BoundingBox(st_cx - st_w / 2, st_cy - st_h / 2, st_cx + st_w / 2, st_cy + st_h / 2),
    ))

    n_neighbors = int(rng.integers(0, config.neighbors_max + 1))
    neighbors = []
    for _ in range(n_neighbors):
        nb_w = rng.uniform(40.0, 180.0)
        nb_h = rng.uniform(60.0, 160.0)
        nb_cx = rng.uniform(nb_w, w_img - nb_w)
        nb_cy = rng.uniform(nb_h, h_img - nb_h)
        nb_vx, nb_vy = rng.uniform(-6.0, 6.0), rng.uniform(-2.0, 2.0)
        neighbors.append((nb_w, nb_h, nb_cx, nb_cy, nb_vx, nb_vy))

    ego_v, ego_a, ego_yr, ego_ya = _ego_profile(rng, n, config.fps)

    def clamp_center(x, y):
        return (float(np.clip(x, ped_w / 2, w_img - ped_w / 2)),
                float(np.clip(y, ped_h / 2, h_img - ped_h / 2)))

    frames = []
    for t in range(n):
        semantic = augment_actions(base[t], intent, phase[t])
        # piecewise-linear pedestrian motion consistent with the action
        if base[t] is BaseAction.WALKING:
            if phase[t] is CrossingPhase.PRE and crosswalk_center is not None:
                dx = crosswalk_center[0] - cx
                step = np.sign(dx) * min(speed, abs(dx))
                cx, cy = clamp_center(cx + step, cy)
            elif phase[t] is CrossingPhase.CROSSING:
                cx, cy = clamp_center(cx + heading * speed, cy - speed * 0.4)
            else:
                cx, cy = clamp_center(cx + heading * speed, cy)

        box = BoundingBox(cx - ped_w / 2, cy - ped_h / 2, cx + ped_w / 2, cy + ped_h / 2)
        objects = []
        for nb_w, nb_h, nb_cx, nb_cy, nb_vx, nb_vy in neighbors:
            ox = float(np.clip(nb_cx + nb_vx * t, nb_w / 2, w_img - nb_w / 2))
            oy = float(np.clip(nb_cy + nb_vy * t, nb_h / 2, h_img - nb_h / 2))
            objects.append(TrafficObjectRecord(
                ObjectType.NEIGHBOR,
                BoundingBox(ox - nb_w / 2, oy - nb_h / 2, ox + nb_w / 2, oy + nb_h / 2),
            ))
        objects.extend(static_objects)

        key = FeatureTable.key_for(track_id, t)
        feat = means[ACTION_INDEX[semantic]] + config.noise_sigma * rng.standard_normal(config.feature_dim)
        features.put(key, feat)

        frames.append(FrameAnnotation(
            frame_index=t,
            box=box,
            base_action=base[t],
            intent=intent,
            crossing_phase=phase[t],
            semantic_action=semantic,
            objects=objects,
            ego=EgoRecord(float(ego_v[t]), float(ego_a[t]), float(ego_yr[t]), float(ego_ya[t])),
            visual_feature_key=key,
        ))
    return Track(track_id, split, frames)


def generate_synthetic(config: GeneratorConfig, seed: int):
    """Build a full synthetic dataset; returns (Dataset, FeatureTable)."""
    config.validate()
    means = class_means(config, seed)
    features = FeatureTable(config.feature_dim)
    tracks = []
    global_index = 0
    for split, count in (("train", config.tracks_train), ("val", config.tracks_val),
                         ("test", config.tracks_test)):
        n_crossers = int(round(config.crosser_fraction * count))
        flags = np.array([True] * n_crossers + [False] * (count - n_crossers))
        np.random.default_rng([seed, 0x5411, global_index]).shuffle(flags)
        for i in range(count):
            track_id = f"{split}_{i:04d}"
            tracks.append(_make_track(track_id, split, bool(flags[i]), config,
                                      seed, global_index, means, features))
            global_index += 1
    return Dataset(fps=config.fps, tracks=tracks), features

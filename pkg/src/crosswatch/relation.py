"""Traffic-object relation features with per-type soft attention.

Six object families contribute to one relation vector: neighbor, traffic
light, traffic sign, crosswalk and station instances are embedded per type,
pooled with additive-scoring attention against the previous hidden state, and
concatenated together with the embedded ego-motion block.  A family with no
instances in a scene contributes an exactly-zero block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .data import (
    BoundingBox,
    EgoRecord,
    FrameAnnotation,
    LightState,
    LightType,
    ObjectType,
    SignType,
    TrafficObjectRecord,
)

# categorical codes fed to the embedding layers
LIGHT_TYPE_CODE = {LightType.GENERAL: 0.0, LightType.PEDESTRIAN: 1.0}
LIGHT_STATE_CODE = {LightState.GREEN: 0.0, LightState.YELLOW: 1.0, LightState.RED: 2.0}
SIGN_TYPE_CODE = {SignType.STOP: 0.0, SignType.CROSSWALK: 1.0, SignType.YIELD: 2.0,
                  SignType.SPEED: 3.0, SignType.OTHER: 4.0}

# attended object families, in relation-vector order; ego follows as block six
ATTENDED_TYPES = (ObjectType.NEIGHBOR, ObjectType.TRAFFIC_LIGHT, ObjectType.TRAFFIC_SIGN,
                  ObjectType.CROSSWALK, ObjectType.STATION)

RAW_DIMS = {
    ObjectType.NEIGHBOR: 4,
    ObjectType.TRAFFIC_LIGHT: 6,
    ObjectType.TRAFFIC_SIGN: 5,
    ObjectType.CROSSWALK: 7,
    ObjectType.STATION: 7,
    "ego": 4,
}

NUM_BLOCKS = len(ATTENDED_TYPES) + 1


def neighbor_feature(neighbor_box: BoundingBox, target_box: BoundingBox) -> np.ndarray:
    """Corner-wise box differences between a neighbor and the target."""
    return neighbor_box.as_array() - target_box.as_array()


def traffic_light_feature(light: TrafficObjectRecord, target_box: BoundingBox) -> np.ndarray:
    """Center offset, light size, and coded light type and state."""
    cxj, cyj = light.box.center
    cxi, cyi = target_box.center
    return np.array([cxj - cxi, cyj - cyi, light.box.width, light.box.height,
                     LIGHT_TYPE_CODE[light.light_type], LIGHT_STATE_CODE[light.light_state]])


def traffic_sign_feature(sign: TrafficObjectRecord, target_box: BoundingBox) -> np.ndarray:
    """Center offset, sign size, and coded sign type."""
    cxj, cyj = sign.box.center
    cxi, cyi = target_box.center
    return np.array([cxj - cxi, cyj - cyi, sign.box.width, sign.box.height,
                     SIGN_TYPE_CODE[sign.sign_type]])


def crosswalk_feature(crosswalk_box: BoundingBox, target_box: BoundingBox) -> np.ndarray:
    """Offsets from the target's bottom center plus the raw crosswalk corners.

    The third entry uses the crosswalk's y1 edge as printed in the defining
    formula, even though the bottom edge might seem more natural.
    """
    bcx, bcy = target_box.bottom_center
    b = crosswalk_box
    return np.array([b.x1 - bcx, b.x2 - bcx, b.y1 - bcy, b.x1, b.y1, b.x2, b.y2])


def station_feature(station_box: BoundingBox, target_box: BoundingBox) -> np.ndarray:
    """Stations use the same geometry as crosswalks."""
    return crosswalk_feature(station_box, target_box)


def ego_feature(ego: EgoRecord) -> np.ndarray:
    """Speed, acceleration, yaw rate and yaw acceleration, passed through."""
    return ego.as_array()


def _scaled_box(box: BoundingBox, image_size) -> BoundingBox:
    w, h = image_size
    return BoundingBox(box.x1 / w, box.y1 / h, box.x2 / w, box.y2 / h)


def raw_object_feature(obj: TrafficObjectRecord, target_box: BoundingBox,
                       normalize: bool = False, image_size=(1.0, 1.0)) -> np.ndarray:
    """Raw feature for one object; coordinates optionally normalized by image size."""
    box = obj.box
    if normalize:
        box = _scaled_box(box, image_size)
        target_box = _scaled_box(target_box, image_size)
        obj = TrafficObjectRecord(obj.object_type, box, obj.light_type, obj.light_state, obj.sign_type)
    if obj.object_type is ObjectType.NEIGHBOR:
        return neighbor_feature(box, target_box)
    if obj.object_type is ObjectType.TRAFFIC_LIGHT:
        return traffic_light_feature(obj, target_box)
    if obj.object_type is ObjectType.TRAFFIC_SIGN:
        return traffic_sign_feature(obj, target_box)
    if obj.object_type is ObjectType.CROSSWALK:
        return crosswalk_feature(box, target_box)
    return station_feature(box, target_box)


def scene_instances(frame: FrameAnnotation, normalize: bool = False, image_size=(1.0, 1.0)):
    """Group a frame's objects by family: {type: (indices, raw feature matrix)}."""
    grouped = {}
    for t in ATTENDED_TYPES:
        ids = [i for i, o in enumerate(frame.objects) if o.object_type is t]
        if ids:
            rows = np.stack([raw_object_feature(frame.objects[i], frame.box, normalize, image_size)
                             for i in ids])
        else:
            rows = np.zeros((0, RAW_DIMS[t]))
        grouped[t] = (ids, rows)
    return grouped


# ---------------------------------------------------------------------------
# parameters and the on-tape network
# ---------------------------------------------------------------------------

def _uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_relation_params(rng, hidden: int, embed_dim: int, attn_dim: int,
                         prefix: str = "rel") -> dict[str, Parameter]:
    """Embedding and attention weights for all six object families."""
    params = {}

    def put(name, value):
        params[name] = Parameter(name, value)

    for t in ATTENDED_TYPES:
        raw = RAW_DIMS[t]
        base = f"{prefix}.{t.value}"
        put(f"{base}.embed.w", _uniform_init(rng, raw, (raw, embed_dim)))
        put(f"{base}.embed.b", np.zeros(embed_dim))
        put(f"{base}.attn.wf", _uniform_init(rng, embed_dim, (embed_dim, attn_dim)))
        put(f"{base}.attn.wh", _uniform_init(rng, hidden, (hidden, attn_dim)))
        put(f"{base}.attn.b", np.zeros(attn_dim))
        put(f"{base}.attn.v", _uniform_init(rng, attn_dim, (attn_dim, 1)))
    put(f"{prefix}.ego.embed.w", _uniform_init(rng, RAW_DIMS["ego"], (RAW_DIMS["ego"], embed_dim)))
    put(f"{prefix}.ego.embed.b", np.zeros(embed_dim))
    return params


def _attend_segments(leaves: dict[str, Tensor], base: str, embedded: Tensor,
                     h_prev: Tensor, counts) -> tuple[Tensor, Tensor]:
    """Additive-scoring attention pooled per segment.

    score_k = v . tanh(Wf e_k + Wh h_prev + b); weights softmax per segment;
    fused row = weighted sum of that segment's embedded instances.
    """
    h_rows = ad.repeat_rows(h_prev, counts)
    pre = ad.add(ad.add(ad.matmul(embedded, leaves[f"{base}.attn.wf"]),
                        ad.matmul(h_rows, leaves[f"{base}.attn.wh"])),
                 leaves[f"{base}.attn.b"])
    scores = ad.matmul(ad.tanh(pre), leaves[f"{base}.attn.v"])
    weights = ad.segment_softmax(scores, counts)
    fused = ad.segment_weighted_sum(weights, embedded, counts)
    return fused, weights


def soft_attend(leaves: dict[str, Tensor], base: str, instances: Tensor,
                h_prev: Tensor) -> tuple[Tensor, Tensor]:
    """Fuse one scene's embedded instances (N, E) against h_prev (1, H).

    Returns the fused (1, E) vector and the (N, 1) attention weights.
    Calling this with zero instances is a contract error; the caller owns the
    zero-block rule for absent families.
    """
    n = instances.data.shape[0]
    if n == 0:
        raise ValueError("soft_attend requires at least one instance; use the zero block")
    return _attend_segments(leaves, base, instances, h_prev, [n])


def relation_block(tape: Tape, leaves: dict[str, Tensor], frames: list[FrameAnnotation],
                   h_prev: Tensor, embed_dim: int, normalize: bool = False,
                   image_size=(1.0, 1.0), prefix: str = "rel", scene_cache: dict | None = None):
    """Batched relation features for one time step.

    frames[b] is sample b's current annotation; h_prev is (B, hidden).
    Returns the (B, 6 * embed_dim) relation tensor and, per sample, the
    attention weights as {object_type: [(object index, weight), ...]}.

    Raw instance features depend only on the annotation, so callers that
    revisit frames (overlapping windows, repeated epochs) can pass a dict to
    memoize them.
    """
    batch = len(frames)
    grouped = []
    for f in frames:
        if scene_cache is None:
            grouped.append(scene_instances(f, normalize, image_size))
        else:
            hit = scene_cache.get(id(f))
            if hit is None:
                # key the entry by object identity and pin the frame so the id
                # cannot be recycled while the cache lives
                hit = (f, scene_instances(f, normalize, image_size))
                scene_cache[id(f)] = hit
            grouped.append(hit[1])
    attention: list[dict] = [{} for _ in range(batch)]
    blocks = []
    for t in ATTENDED_TYPES:
        per_sample = [g[t] for g in grouped]
        counts = [len(ids) for ids, _ in per_sample]
        total = sum(counts)
        if total == 0:
            blocks.append(tape.tensor(np.zeros((batch, embed_dim))))
            continue
        raw = np.concatenate([rows for _, rows in per_sample], axis=0)
        base = f"{prefix}.{t.value}"
        embedded = ad.add(ad.matmul(tape.tensor(raw), leaves[f"{base}.embed.w"]),
                          leaves[f"{base}.embed.b"])
        fused, weights = _attend_segments(leaves, base, embedded, h_prev, counts)
        blocks.append(fused)
        pos = 0
        for b, (ids, _) in enumerate(per_sample):
            if ids:
                w = weights.data[pos:pos + len(ids), 0]
                attention[b][t] = list(zip(ids, w.tolist()))
                pos += len(ids)
    ego_raw = np.stack([ego_feature(f.ego) for f in frames])
    ego_embedded = ad.add(ad.matmul(tape.tensor(ego_raw), leaves[f"{prefix}.ego.embed.w"]),
                          leaves[f"{prefix}.ego.embed.b"])
    blocks.append(ego_embedded)
    return ad.concat(blocks), attention


@dataclass
class RelationFeature:
    """Single-scene relation feature with per-family attention weights."""

    blocks: dict  # object type (or "ego") -> embedded block, each (embed_dim,)
    f_rel: np.ndarray
    attention: dict  # object type -> [(object index, weight), ...]


def build_relation_feature(frame: FrameAnnotation, h_prev: np.ndarray,
                           params: dict[str, Parameter], embed_dim: int,
                           normalize: bool = False, image_size=(1.0, 1.0)) -> RelationFeature:
    """Single-sample relation feature; absent families yield exact zero blocks."""
    tape = Tape()
    leaves = {name: tape.watch(p) for name, p in params.items()}
    f_rel, attention = relation_block(
        tape, leaves, [frame], tape.tensor(h_prev.reshape(1, -1)),
        embed_dim, normalize, image_size)
    vec = f_rel.data[0]
    blocks = {}
    for i, t in enumerate(ATTENDED_TYPES):
        blocks[t] = vec[i * embed_dim:(i + 1) * embed_dim]
    blocks["ego"] = vec[len(ATTENDED_TYPES) * embed_dim:]
    return RelationFeature(blocks=blocks, f_rel=vec, attention=attention[0])

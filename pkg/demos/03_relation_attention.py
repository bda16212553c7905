"""Relation features for one scene, with interpretable attention weights.

Builds a frame with two neighbors, a traffic light and a crosswalk, embeds
each object family, pools multi-instance families with soft attention against
a hidden state, and prints the per-instance weights.
"""

import numpy as np

from crosswatch import (
    BaseAction,
    BoundingBox,
    CrossingPhase,
    EgoRecord,
    FrameAnnotation,
    LightState,
    LightType,
    ObjectType,
    SemanticAction,
    TrafficObjectRecord,
    build_relation_feature,
    crosswalk_feature,
    neighbor_feature,
    traffic_light_feature,
)
from crosswatch.relation import init_relation_params

target = BoundingBox(100, 100, 150, 200)
objects = [
    TrafficObjectRecord(ObjectType.NEIGHBOR, BoundingBox(120, 110, 160, 210)),
    TrafficObjectRecord(ObjectType.NEIGHBOR, BoundingBox(700, 300, 900, 450)),
    TrafficObjectRecord(ObjectType.TRAFFIC_LIGHT, BoundingBox(10, 10, 20, 30),
                        light_type=LightType.PEDESTRIAN, light_state=LightState.RED),
    TrafficObjectRecord(ObjectType.CROSSWALK, BoundingBox(90, 180, 200, 220)),
]

print("raw feature vectors:")
print("  neighbor :", neighbor_feature(objects[0].box, target))
print("  light    :", traffic_light_feature(objects[2], target))
print("  crosswalk:", crosswalk_feature(objects[3].box, target))

frame = FrameAnnotation(
    frame_index=0, box=target, base_action=BaseAction.STANDING, intent=1,
    crossing_phase=CrossingPhase.PRE, semantic_action=SemanticAction.WAITING,
    objects=objects, ego=EgoRecord(4.2, 0.1, 0.01, 0.0))

hidden = 16
params = init_relation_params(np.random.default_rng(1), hidden, embed_dim=8, attn_dim=8)
feature = build_relation_feature(frame, np.random.default_rng(2).normal(size=hidden),
                                 params, embed_dim=8)
print(f"\nrelation vector length: {len(feature.f_rel)} (6 blocks of 8)")
print("attention per family:")
for obj_type, pairs in feature.attention.items():
    weights = ", ".join(f"object[{i}] -> {w:.3f}" for i, w in pairs)
    print(f"  {obj_type.value:14s} {weights}")

absent = [t for t in (ObjectType.TRAFFIC_SIGN, ObjectType.STATION)]
for t in absent:
    block = feature.blocks[t]
    print(f"absent family {t.value}: block all zero -> {bool(np.all(block == 0.0))}")

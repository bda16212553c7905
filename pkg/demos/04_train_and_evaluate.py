"""Train a small model end to end and score it on the held-out split.

Uses a reduced architecture so the whole demo runs in well under a minute;
the shipped defaults (hidden 128, 30-frame windows, horizon 5) behave the
same way, just slower.
"""

import numpy as np

from crosswatch import GeneratorConfig, TrainConfig, evaluate, generate_synthetic, train

dataset, features = generate_synthetic(
    GeneratorConfig(tracks_train=40, tracks_val=10, tracks_test=10,
                    frames_per_track=60, feature_dim=16), seed=0)

config = TrainConfig(t_window=20, horizon=3, learning_rate=1e-3, batch_size=16,
                     epochs=4, seed=1, ablation="full", stride=10,
                     hidden=32, visual_embed=16, box_embed=8, relation_embed=8,
                     attention_hidden=8, action_embed=8)
result = train(config, dataset, features)

print("epoch  omega1  train_loss  val_auc")
for entry in result.log:
    print(f"{entry['epoch']:5d}  {entry['omega1']:.4f}  {entry['train_loss']:10.4f}  "
          f"{entry['val_auc']:.4f}")
print(f"best val AUC {result.best_metric:.4f} at epoch {result.best_epoch}")

for setting in ("original", "event"):
    report = evaluate(result.model, dataset, features, setting=setting)
    print(f"\n[{setting}] frames={report.frames}  AUC={report.auc:.4f}  "
          f"margin={report.delta_s:.3f}  acc={report.accuracy:.3f}  mAP={report.action_map:.4f}")

# per-frame streaming on one test track, the way an online system would run it
track = dataset.tracks_for("test")[0]
runner = result.model.runner(track.track_id, features)
print(f"\nstreaming track {track.track_id} (intent={track.frames[0].intent}):")
for frame in track.frames[::12]:
    out = runner.step(frame)
    top = int(np.argmax(out.action_dist))
    print(f"  t={frame.frame_index:2d}  intent={out.intent_score:.3f}  "
          f"action#{top} p={out.action_dist[top]:.2f}")

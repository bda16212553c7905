"""End-to-end gradient verification on a toy configuration.

Builds a tiny full model (3-frame windows, horizon 2, 8-d features, hidden 8)
on synthetic data, then compares every parameter's analytic gradient of the
training loss against central finite differences, reported per parameter
group.  A fault-injection hook deliberately corrupts one group's analytic
gradients so the detector itself can be tested.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, relaxed_gc
from .data import sample_original
from .model import BehaviorModel
from .synthetic import GeneratorConfig, generate_synthetic
from .training import LossWeights, TrainConfig, batch_loss_node

TOY_TRAIN = TrainConfig(t_window=3, horizon=2, learning_rate=1e-3, batch_size=2,
                        epochs=1, ablation="full", stride=3, hidden=8,
                        visual_embed=8, box_embed=4, relation_embed=4,
                        attention_hidden=4, action_embed=4)

TOY_GEN = GeneratorConfig(tracks_train=6, tracks_val=1, tracks_test=1,
                          frames_per_track=12, feature_dim=8, neighbors_max=3)


def _toy_batch(seed: int):
    dataset, features = generate_synthetic(TOY_GEN, seed=seed)
    samples, _ = sample_original(dataset, TOY_TRAIN.t_window, TOY_TRAIN.stride, split="train")

    def neighbor_peak(sample):
        return max(sum(o.object_type.value == "neighbor" for o in f.objects)
                   for f in sample.frames)

    # prefer windows with several neighbors so attention scoring carries a
    # real gradient instead of the constant singleton softmax
    ordered = sorted(samples, key=lambda s: -neighbor_peak(s))
    return ordered[:TOY_TRAIN.batch_size], features


def end_to_end_gradcheck(seed: int = 0, epsilon: float = 1e-4,
                         corrupt_group: str | None = None) -> dict[str, float]:
    """Max relative gradient error per parameter group on the toy model.

    The default step is larger than the usual 1e-5 because some attention
    parameters carry gradients around 1e-9 here: with a smaller step the
    finite-difference rounding noise (loss is order 1, so about 1e-16 / 2eps)
    would swamp the 1e-8 floor of the relative-error denominator.
    """
    batch, features = _toy_batch(seed)
    model = BehaviorModel.create(TOY_TRAIN.model_config(features.dim), seed)
    weights = LossWeights(omega1=0.5)

    def loss_value() -> float:
        tape = Tape()
        steps = model.run_window(tape, batch, features)
        return float(batch_loss_node(tape, steps, batch, weights, model.config.num_actions).data)

    with relaxed_gc():
        model.zero_grad()
        tape = Tape()
        steps = model.run_window(tape, batch, features)
        tape.backward(batch_loss_node(tape, steps, batch, weights, model.config.num_actions))
        analytic = {name: p.grad.copy() for name, p in model.params.items()}
        if corrupt_group is not None:
            hit = [n for n in analytic if n.rsplit(".", 1)[0] == corrupt_group]
            if not hit:
                raise ValueError(f"unknown parameter group {corrupt_group!r}")
            for name in hit:
                analytic[name] = analytic[name] * 1.5 + 0.05

        errors: dict[str, float] = {}
        for name, param in model.params.items():
            group = name.rsplit(".", 1)[0]
            numeric = np.zeros_like(param.value)
            flat = param.value.ravel()
            num_flat = numeric.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                hi = loss_value()
                flat[i] = orig - epsilon
                lo = loss_value()
                flat[i] = orig
                num_flat[i] = (hi - lo) / (2.0 * epsilon)
            rel = np.abs(analytic[name] - numeric) / np.maximum(
                1e-8, np.abs(analytic[name]) + np.abs(numeric))
            errors[group] = max(errors.get(group, 0.0), float(rel.max()))
    return errors

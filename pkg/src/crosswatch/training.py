"""Multi-task objective, weight schedule, Adam loop and checkpointing.

The per-window loss averages, over time steps, a weighted sum of the intent
binary cross-entropy, the current-action cross-entropy and the future-action
cross-entropy (itself averaged over the decoded horizon, with steps beyond
the window's end masked out).  The intent weight follows a sigmoid ramp over
training iterations from ~0 towards 1, so the action tasks shape the shared
representation first.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import autodiff as ad
from . import metrics as metrics_mod
from .autodiff import Tape, relaxed_gc
from .data import ACTION_INDEX, Dataset, SequenceSample, balanced_sampler, sample_original
from .model import AblationFlags, BehaviorModel, ModelConfig, StepOutput

CLAMP_EPS = 1e-12


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class LossWeights:
    omega1: float = 1.0
    omega2: float = 1.0
    omega3: float = 1.0


def omega1_schedule(iteration: float, midpoint: float, steepness: float) -> float:
    """Sigmoid ramp of the intent weight over training iterations."""
    if steepness <= 0:
        raise ValueError("steepness must be positive")
    return float(1.0 / (1.0 + math.exp(-steepness * (iteration - midpoint))))


@dataclass
class TrainConfig:
    t_window: int = 30
    horizon: int = 5
    learning_rate: float = 1e-5
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    ablation: str = "full"
    schedule_midpoint: float | None = None  # default: half the total iterations
    schedule_steepness: float | None = None  # default: 10 / midpoint
    stride: int = 15
    hidden: int = 128
    visual_embed: int = 128
    box_embed: int = 32
    relation_embed: int = 32
    attention_hidden: int = 64
    action_embed: int = 32
    normalize_coords: bool = True
    image_width: float = 1920.0
    image_height: float = 1080.0

    def validate(self):
        if not self.t_window > self.horizon >= 1:
            raise ValueError("need t_window > horizon >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.stride < 1:
            raise ValueError("batch_size, epochs and stride must be >= 1")
        AblationFlags.from_code(self.ablation)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, raw: dict) -> "TrainConfig":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        config = cls(**raw)
        config.validate()
        return config

    def model_config(self, visual_dim: int) -> ModelConfig:
        return ModelConfig(
            visual_dim=visual_dim,
            hidden=self.hidden,
            visual_embed=self.visual_embed,
            box_embed=self.box_embed,
            relation_embed=self.relation_embed,
            attention_hidden=self.attention_hidden,
            action_embed=self.action_embed,
            horizon=self.horizon,
            ablation=AblationFlags.from_code(self.ablation),
            normalize_coords=self.normalize_coords,
            image_width=self.image_width,
            image_height=self.image_height,
        )


def desk_config(**overrides) -> TrainConfig:
    """Desk-scale defaults for the synthetic data: smaller batches, faster lr."""
    base = TrainConfig(batch_size=8, learning_rate=1e-3, epochs=15)
    return replace(base, **overrides)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass
class SequenceLabels:
    intent: np.ndarray  # (T,) zeros/ones
    action: np.ndarray  # (T,) class indices

    @classmethod
    def from_sample(cls, sample: SequenceSample) -> "SequenceLabels":
        return cls(
            intent=np.array([f.intent for f in sample.frames], dtype=np.float64),
            action=np.array([ACTION_INDEX[f.semantic_action] for f in sample.frames]),
        )


def _clamped_log(p: float) -> float:
    return math.log(min(max(p, CLAMP_EPS), 1.0 - CLAMP_EPS))


def multitask_loss(outputs: list[StepOutput], labels: SequenceLabels,
                   weights: LossWeights) -> float:
    """Reference (numpy) form of the training objective for one sequence."""
    t_len = len(outputs)
    if t_len != len(labels.intent) or t_len != len(labels.action):
        raise ValueError(f"got {t_len} outputs but {len(labels.intent)} labels")
    total = 0.0
    for t, out in enumerate(outputs):
        step = 0.0
        if out.intent_score is not None:
            y = labels.intent[t]
            step += weights.omega1 * -(y * _clamped_log(out.intent_score)
                                       + (1 - y) * _clamped_log(1.0 - out.intent_score))
        if out.action_dist is not None:
            step += weights.omega2 * -_clamped_log(out.action_dist[labels.action[t]])
        if out.future_action_dists is not None:
            future_terms = []
            for k in range(1, len(out.future_action_dists) + 1):
                if t + k < t_len:
                    future_terms.append(-_clamped_log(out.future_action_dists[k - 1][labels.action[t + k]]))
            if future_terms:
                step += weights.omega3 * float(np.mean(future_terms))
        total += step
    return total / t_len


def _one_hot(indices: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(indices), width))
    out[np.arange(len(indices)), indices] = 1.0
    return out


def batch_loss_node(tape: Tape, steps: list[dict], samples: list[SequenceSample],
                    weights: LossWeights, num_actions: int):
    """On-tape batch loss: mean over samples of the per-sequence objective."""
    t_len = len(steps)
    batch = len(samples)
    intents = np.stack([[f.intent for f in s.frames] for s in samples]).astype(np.float64)
    actions = np.stack([[ACTION_INDEX[f.semantic_action] for f in s.frames] for s in samples])
    acc = None
    for t, out in enumerate(steps):
        step_terms = []
        if "intent" in out:
            y = tape.tensor(intents[:, t:t + 1])
            prob = ad.clamp(out["intent"], CLAMP_EPS, 1.0 - CLAMP_EPS)
            comp = ad.clamp(ad.add_scalar(ad.scale(out["intent"], -1.0), 1.0),
                            CLAMP_EPS, 1.0 - CLAMP_EPS)
            bce = ad.scale(ad.add(ad.mul(y, ad.log(prob)),
                                  ad.mul(ad.add_scalar(ad.scale(y, -1.0), 1.0), ad.log(comp))),
                           -1.0)
            step_terms.append(ad.scale(ad.row_sum(bce), weights.omega1))
        if "action_logp" in out:
            onehot = tape.tensor(_one_hot(actions[:, t], num_actions))
            ce = ad.scale(ad.row_sum(ad.mul(onehot, out["action_logp"])), -1.0)
            step_terms.append(ad.scale(ce, weights.omega2))
        if "future_logps" in out:
            valid = [k for k in range(1, len(out["future_logps"]) + 1) if t + k < t_len]
            if valid:
                fsum = None
                for k in valid:
                    onehot = tape.tensor(_one_hot(actions[:, t + k], num_actions))
                    term = ad.scale(ad.row_sum(ad.mul(onehot, out["future_logps"][k - 1])), -1.0)
                    fsum = term if fsum is None else ad.add(fsum, term)
                step_terms.append(ad.scale(fsum, weights.omega3 / len(valid)))
        for term in step_terms:
            acc = term if acc is None else ad.add(acc, term)
    if acc is None:
        raise ValueError("no loss terms: model has no enabled heads")
    return ad.mean(ad.scale(acc, 1.0 / t_len))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Standard Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient in {name}")
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def optimizer_step(optimizer: Adam):
    """Apply one update from the accumulated parameter gradients."""
    optimizer.step()
    return optimizer


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: BehaviorModel
    best_metric: float
    best_epoch: int
    metric_name: str
    log: list[dict]


def _group_by_length(tracks):
    groups: dict[int, list] = {}
    for track in tracks:
        groups.setdefault(len(track.frames), []).append(track)
    return groups


def _validation_metric(model: BehaviorModel, dataset: Dataset, features) -> tuple[str, float]:
    """Intent AUC over per-frame validation records, or action mAP without an intent head."""
    records = []
    for length, tracks in sorted(_group_by_length(dataset.tracks_for("val")).items()):
        windows = [SequenceSample(t.track_id, t.frames, t.split) for t in tracks]
        for chunk_start in range(0, len(windows), 64):
            chunk = windows[chunk_start:chunk_start + 64]
            tape = Tape()
            steps = model.run_window(tape, chunk, features)
            for t, out in enumerate(steps):
                for b, sample in enumerate(chunk):
                    frame = sample.frames[t]
                    records.append(metrics_mod.EvalRecord(
                        intent_score=float(out["intent"].data[b, 0]) if "intent" in out else None,
                        intent_label=frame.intent,
                        action_probs=out["action_dist"].data[b].copy() if "action_dist" in out else None,
                        action_label=ACTION_INDEX[frame.semantic_action],
                    ))
    if model.config.ablation.intent:
        value = metrics_mod.auc(records)
        return "val_auc", value if value is not None else 0.5
    value, _, _ = metrics_mod.action_map(records)
    return "val_map", value


def train(config: TrainConfig, dataset: Dataset, features, out_dir=None) -> TrainResult:
    """Balanced-batch Adam training; keeps the best validation checkpoint.

    With out_dir set, writes checkpoint.bin and train_log.jsonl there and
    holds a lock file for the duration of the run.
    """
    config.validate()
    samples, _ = sample_original(dataset, config.t_window, config.stride, split="train")
    if not samples:
        raise ValueError(f"no training windows of length {config.t_window}")
    if not dataset.tracks_for("val"):
        raise ValueError("dataset has no validation split")

    lock_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        lock_path = os.path.join(out_dir, ".lock")
        try:
            fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.close(fd)
        except FileExistsError:
            raise RuntimeError(f"another training run holds {lock_path}") from None
    try:
        return _train_inner(config, dataset, features, samples, out_dir)
    finally:
        if lock_path is not None and os.path.exists(lock_path):
            os.remove(lock_path)


def _train_inner(config, dataset, features, samples, out_dir):
    model = BehaviorModel.create(config.model_config(features.dim), config.seed)
    sampler = balanced_sampler(samples, config.seed)
    steps_per_epoch = max(1, math.ceil(len(samples) / config.batch_size))
    total_iterations = steps_per_epoch * config.epochs
    midpoint = config.schedule_midpoint if config.schedule_midpoint is not None else total_iterations / 2.0
    steepness = config.schedule_steepness if config.schedule_steepness is not None else 10.0 / max(midpoint, 1e-9)
    optimizer = Adam(model.params, config.learning_rate)
    weights = LossWeights()

    log: list[dict] = []
    best_metric, best_epoch, best_values = -np.inf, -1, None
    iteration = 0
    with relaxed_gc():
        for epoch in range(config.epochs):
            epoch_losses = []
            for step_idx in range(steps_per_epoch):
                batch = [next(sampler) for _ in range(config.batch_size)]
                weights.omega1 = omega1_schedule(iteration, midpoint, steepness)
                tape = Tape()
                steps = model.run_window(tape, batch, features)
                loss = batch_loss_node(tape, steps, batch, weights, model.config.num_actions)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise DivergenceError(f"non-finite loss at epoch {epoch} step {step_idx}")
                model.zero_grad()
                tape.backward(loss)
                try:
                    optimizer.step()
                except DivergenceError as exc:
                    raise DivergenceError(f"epoch {epoch} step {step_idx}: {exc}") from None
                epoch_losses.append(value)
                iteration += 1
            metric_name, metric = _validation_metric(model, dataset, features)
            entry = {
                "epoch": epoch,
                "iteration": iteration,
                "omega1": weights.omega1,
                "train_loss": float(np.mean(epoch_losses)),
                metric_name: metric,
            }
            log.append(entry)
            if metric > best_metric:
                best_metric, best_epoch = metric, epoch
                best_values = {k: p.value.copy() for k, p in model.params.items()}

    for name, value in best_values.items():
        model.params[name].value[...] = value
    result = TrainResult(model=model, best_metric=best_metric, best_epoch=best_epoch,
                         metric_name=metric_name, log=log)
    if out_dir is not None:
        model.save(os.path.join(out_dir, "checkpoint.bin"))
        with open(os.path.join(out_dir, "train_log.jsonl"), "w", encoding="utf-8") as fh:
            for entry in log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return result

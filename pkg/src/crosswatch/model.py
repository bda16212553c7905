"""Multi-task recurrent intent and action model.

Per frame, visual and box embeddings (plus the previous step's future-action
feature and, when enabled, the relation vector) feed a GRU encoder; the
hidden state drives an intent head and an action head, and a GRU decoder
unrolls a fresh forecast of the next `horizon` action distributions.  The
mean of the decoder hiddens loops back as an input to the next encoder step.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import relation
from .autodiff import Parameter, Tape, Tensor
from .data import NUM_ACTIONS, FrameAnnotation, SequenceSample

CHECKPOINT_MAGIC = b"CWCKPT01"

ABLATION_CODES = {
    "i": dict(intent=True, action=False, future=False, relation=False),
    "a": dict(intent=False, action=True, future=False, relation=False),
    "ia": dict(intent=True, action=True, future=False, relation=False),
    "af": dict(intent=False, action=True, future=True, relation=False),
    "iaf": dict(intent=True, action=True, future=True, relation=False),
    "full": dict(intent=True, action=True, future=True, relation=True),
}


@dataclass(frozen=True)
class AblationFlags:
    intent: bool = True
    action: bool = True
    future: bool = True
    relation: bool = True

    def __post_init__(self):
        if not (self.intent or self.action):
            raise ValueError("at least one of the intent / action heads must be enabled")
        if self.future and not self.action:
            raise ValueError("the future-action decoder requires the action task")

    @classmethod
    def from_code(cls, code: str) -> "AblationFlags":
        if code not in ABLATION_CODES:
            raise ValueError(f"unknown ablation {code!r}; expected one of {sorted(ABLATION_CODES)}")
        return cls(**ABLATION_CODES[code])

    @property
    def code(self) -> str:
        for code, flags in ABLATION_CODES.items():
            if AblationFlags(**flags) == self:
                return code
        return "custom"


@dataclass(frozen=True)
class ModelConfig:
    visual_dim: int = 64
    hidden: int = 128
    visual_embed: int = 128
    box_embed: int = 32
    relation_embed: int = 32
    attention_hidden: int = 64
    action_embed: int = 32
    horizon: int = 5
    num_actions: int = NUM_ACTIONS
    ablation: AblationFlags = field(default_factory=AblationFlags)
    normalize_coords: bool = True
    image_width: float = 1920.0
    image_height: float = 1080.0

    @property
    def encoder_input(self) -> int:
        width = self.visual_embed + self.box_embed + self.hidden
        if self.ablation.relation:
            width += relation.NUM_BLOCKS * self.relation_embed
        return width

    def to_json(self) -> dict:
        raw = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "ablation"}
        raw["ablation"] = {k: getattr(self.ablation, k) for k in ("intent", "action", "future", "relation")}
        return raw

    @classmethod
    def from_json(cls, raw: dict) -> "ModelConfig":
        raw = dict(raw)
        ablation = AblationFlags(**raw.pop("ablation"))
        known = set(cls.__dataclass_fields__) - {"ablation"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(ablation=ablation, **raw)


@dataclass
class StepOutput:
    """Per-frame model output for one sample."""

    intent_score: float | None
    action_dist: np.ndarray | None
    future_action_dists: np.ndarray | None
    attention: dict | None
    h: np.ndarray


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _init_gru(params, rng, prefix, in_dim, hidden):
    for gate in ("z", "r", "n"):
        params[f"{prefix}.w_{gate}"] = Parameter(f"{prefix}.w_{gate}", _uniform(rng, in_dim, (in_dim, hidden)))
        params[f"{prefix}.u_{gate}"] = Parameter(f"{prefix}.u_{gate}", _uniform(rng, hidden, (hidden, hidden)))
        params[f"{prefix}.b_{gate}"] = Parameter(f"{prefix}.b_{gate}", np.zeros(hidden))


def gru_cell(leaves: dict[str, Tensor], prefix: str, x: Tensor, h: Tensor) -> Tensor:
    """One gated recurrent update: h' = (1 - z) * n + z * h.

    The per-gate weight leaves are concatenated once per tape and reused by
    every time step, so the fused-cell node sees [Wz|Wr|Wn] and [Uz|Ur].
    """
    tape = x.tape
    key = ("gru_fused", prefix)
    fused = tape.cache.get(key)
    if fused is None:
        fused = (
            ad.concat([leaves[f"{prefix}.w_z"], leaves[f"{prefix}.w_r"], leaves[f"{prefix}.w_n"]]),
            ad.concat([leaves[f"{prefix}.u_z"], leaves[f"{prefix}.u_r"]]),
            ad.concat([leaves[f"{prefix}.b_z"], leaves[f"{prefix}.b_r"], leaves[f"{prefix}.b_n"]]),
        )
        tape.cache[key] = fused
    w_all, u_zr, b_all = fused
    return ad.gru_gates(x, h, w_all, u_zr, leaves[f"{prefix}.u_n"], b_all)


class BehaviorModel:
    """Parameter container plus the forward passes over sequences."""

    def __init__(self, config: ModelConfig, params: dict[str, Parameter]):
        self.config = config
        self.params = params
        # memoized raw per-scene object features, keyed by frame identity
        self._scene_cache: dict = {}

    @classmethod
    def create(cls, config: ModelConfig, seed: int) -> "BehaviorModel":
        rng = np.random.default_rng(seed)
        c = config
        params: dict[str, Parameter] = {}

        def put(name, value):
            params[name] = Parameter(name, value)

        put("embed.visual.w", _uniform(rng, c.visual_dim, (c.visual_dim, c.visual_embed)))
        put("embed.visual.b", np.zeros(c.visual_embed))
        put("embed.box.w", _uniform(rng, 4, (4, c.box_embed)))
        put("embed.box.b", np.zeros(c.box_embed))
        _init_gru(params, rng, "enc.gru", c.encoder_input, c.hidden)
        if c.ablation.relation:
            params.update(relation.init_relation_params(rng, c.hidden, c.relation_embed,
                                                        c.attention_hidden))
        if c.ablation.future:
            put("dec.embed.w", _uniform(rng, c.num_actions, (c.num_actions, c.action_embed)))
            put("dec.embed.b", np.zeros(c.action_embed))
            put("dec.embed.start", _uniform(rng, c.action_embed, (c.action_embed,)))
            _init_gru(params, rng, "dec.gru", c.action_embed, c.hidden)
        if c.ablation.intent:
            put("head.intent.w", _uniform(rng, c.hidden, (c.hidden, 1)))
            put("head.intent.b", np.zeros(1))
        if c.ablation.action:
            put("head.action.w", _uniform(rng, c.hidden, (c.hidden, c.num_actions)))
            put("head.action.b", np.zeros(c.num_actions))
        if c.ablation.future:
            put("head.future.w", _uniform(rng, c.hidden, (c.hidden, c.num_actions)))
            put("head.future.b", np.zeros(c.num_actions))
        return cls(config, params)

    def leaves(self, tape: Tape) -> dict[str, Tensor]:
        return {name: tape.watch(p) for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def parameter_groups(self) -> dict[str, list[Parameter]]:
        groups: dict[str, list[Parameter]] = {}
        for name, p in self.params.items():
            groups.setdefault(name.rsplit(".", 1)[0], []).append(p)
        return groups

    # ------------------------------------------------------------------
    # forward passes
    # ------------------------------------------------------------------

    def _boxes_array(self, frames: list[FrameAnnotation]) -> np.ndarray:
        rows = np.stack([f.box.as_array() for f in frames])
        if self.config.normalize_coords:
            rows = rows / np.array([self.config.image_width, self.config.image_height] * 2)
        return rows

    def _predict_future(self, tape, leaves, h: Tensor, batch: int):
        c = self.config
        u = ad.add(tape.tensor(np.zeros((batch, c.action_embed))), leaves["dec.embed.start"])
        d = h
        hidden_sum = None
        dists, logps = [], []
        for _ in range(c.horizon):
            d = gru_cell(leaves, "dec.gru", u, d)
            logits = ad.add(ad.matmul(d, leaves["head.future.w"]), leaves["head.future.b"])
            dist = ad.row_softmax(logits)
            dists.append(dist)
            logps.append(ad.log_softmax(logits))
            u = ad.add(ad.matmul(dist, leaves["dec.embed.w"]), leaves["dec.embed.b"])
            hidden_sum = d if hidden_sum is None else ad.add(hidden_sum, d)
        future_feature = ad.scale(hidden_sum, 1.0 / c.horizon)
        return dists, logps, future_feature

    def step(self, tape, leaves, frames: list[FrameAnnotation], visual: np.ndarray,
             h: Tensor, future: Tensor, boxes: np.ndarray | None = None):
        """Advance one frame for a batch; returns (new h, new future, outputs)."""
        c = self.config
        batch = len(frames)
        if boxes is None:
            boxes = self._boxes_array(frames)
        parts = [
            ad.tanh(ad.add(ad.matmul(tape.tensor(visual), leaves["embed.visual.w"]),
                           leaves["embed.visual.b"])),
            ad.tanh(ad.add(ad.matmul(tape.tensor(boxes), leaves["embed.box.w"]),
                           leaves["embed.box.b"])),
            future,
        ]
        attention = None
        if c.ablation.relation:
            rel, attention = relation.relation_block(
                tape, leaves, frames, h, c.relation_embed,
                normalize=c.normalize_coords,
                image_size=(c.image_width, c.image_height),
                scene_cache=self._scene_cache)
            parts.append(rel)
        h_new = gru_cell(leaves, "enc.gru", ad.concat(parts), h)

        out = {"h": h_new, "attention": attention}
        if c.ablation.intent:
            logit = ad.add(ad.matmul(h_new, leaves["head.intent.w"]), leaves["head.intent.b"])
            out["intent_logit"] = logit
            out["intent"] = ad.sigmoid(logit)
        if c.ablation.action:
            logits = ad.add(ad.matmul(h_new, leaves["head.action.w"]), leaves["head.action.b"])
            out["action_dist"] = ad.row_softmax(logits)
            out["action_logp"] = ad.log_softmax(logits)
        if c.ablation.future:
            dists, logps, future_new = self._predict_future(tape, leaves, h_new, batch)
            out["future_dists"] = dists
            out["future_logps"] = logps
        else:
            future_new = future
        return h_new, future_new, out

    def run_window(self, tape, samples: list[SequenceSample], features):
        """Forward a batch of equal-length windows on one tape (for training)."""
        lengths = {len(s) for s in samples}
        if len(lengths) != 1:
            raise ValueError(f"windows in one batch must share a length, got {sorted(lengths)}")
        batch = len(samples)
        t_len = lengths.pop()
        visual = np.zeros((batch, t_len, self.config.visual_dim))
        boxes = np.zeros((batch, t_len, 4))
        for b, s in enumerate(samples):
            for t, f in enumerate(s.frames):
                visual[b, t] = features.get(s.track_id, f.frame_index)
            boxes[b] = self._boxes_array(s.frames)
        leaves = self.leaves(tape)
        h = tape.tensor(np.zeros((batch, self.config.hidden)))
        future = tape.tensor(np.zeros((batch, self.config.hidden)))
        steps = []
        for t in range(t_len):
            frames_t = [s.frames[t] for s in samples]
            h, future, out = self.step(tape, leaves, frames_t, visual[:, t], h, future,
                                       boxes=boxes[:, t])
            steps.append(out)
        return steps

    def runner(self, track_id: str, features) -> "OnlineRunner":
        return OnlineRunner(self, track_id, features)

    def forward_sequence(self, sample: SequenceSample, features) -> list[StepOutput]:
        """Frame-by-frame outputs for one sample (inference path)."""
        runner = self.runner(sample.track_id, features)
        return [runner.step(frame) for frame in sample.frames]

    # ------------------------------------------------------------------
    # checkpoints
    # ------------------------------------------------------------------

    def save(self, path):
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path) -> "BehaviorModel":
        return load_checkpoint(path)


class OnlineRunner:
    """Stateful per-frame inference; each step runs on a fresh tape."""

    def __init__(self, model: BehaviorModel, track_id: str, features):
        self.model = model
        self.track_id = track_id
        self.features = features
        self.h = np.zeros((1, model.config.hidden))
        self.future = np.zeros((1, model.config.hidden))
        self.t = 0

    def step(self, frame: FrameAnnotation) -> StepOutput:
        visual = np.asarray(self.features.get(self.track_id, frame.frame_index),
                            dtype=np.float64)[None, :]
        tape = Tape()
        leaves = self.model.leaves(tape)
        h, future, out = self.model.step(
            tape, leaves, [frame], visual, tape.tensor(self.h), tape.tensor(self.future))
        self.h = h.data.copy()
        self.future = future.data.copy()
        self.t += 1
        future_dists = None
        if "future_dists" in out:
            future_dists = np.stack([d.data[0] for d in out["future_dists"]])
        return StepOutput(
            intent_score=float(out["intent"].data[0, 0]) if "intent" in out else None,
            action_dist=out["action_dist"].data[0].copy() if "action_dist" in out else None,
            future_action_dists=future_dists,
            attention=out["attention"][0] if out["attention"] is not None else None,
            h=h.data[0].copy(),
        )


# ---------------------------------------------------------------------------
# checkpoint format: magic, manifest (json), then float64 little-endian blobs
# ---------------------------------------------------------------------------

class CheckpointError(ValueError):
    """Unreadable or architecture-incompatible checkpoint."""


def save_checkpoint(model: BehaviorModel, path):
    names = sorted(model.params)
    entries = []
    offset = 0
    for name in names:
        shape = list(model.params[name].value.shape)
        entries.append({"name": name, "shape": shape, "offset": offset})
        offset += int(np.prod(shape)) * 8
    manifest = json.dumps({"config": model.config.to_json(), "params": entries},
                          sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for name in names:
            fh.write(model.params[name].value.astype("<f8").tobytes())


def load_checkpoint(path) -> BehaviorModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {blob[:8]!r}; not a checkpoint")
    (mlen,) = struct.unpack("<I", blob[8:12])
    try:
        manifest = json.loads(blob[12:12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable manifest: {exc}") from None
    config = ModelConfig.from_json(manifest["config"])
    model = BehaviorModel.create(config, seed=0)
    expected = {name: p.value.shape for name, p in model.params.items()}
    seen = set()
    data = blob[12 + mlen:]
    for entry in manifest["params"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in expected:
            raise CheckpointError(f"checkpoint parameter {name!r} not in configured architecture")
        if expected[name] != shape:
            raise CheckpointError(f"{name}: checkpoint shape {shape} != architecture {expected[name]}")
        count = int(np.prod(shape))
        raw = data[offset:offset + count * 8]
        if len(raw) != count * 8:
            raise CheckpointError(f"{name}: truncated tensor data")
        model.params[name].value[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
        seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)}")
    return model

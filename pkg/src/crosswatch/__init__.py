"""Pedestrian crossing-intent and action detection at desk scale.

A numpy-based library implementing a multi-task recurrent model that detects
per-frame crossing intent, classifies the current action and forecasts the
next few actions, feeding the forecast back into the encoder; an attentive
relation module fuses traffic-object context.  Ships with its own
reverse-mode autodiff core, a synthetic scenario generator, sampling
protocols, a training loop and the evaluation metric suite.
"""

from .autodiff import GradCheckError, Parameter, ShapeError, Tape, Tensor, grad_check
from .data import (
    ACTION_CLASSES,
    AnnotationError,
    BaseAction,
    BoundingBox,
    CrossingPhase,
    Dataset,
    EgoRecord,
    FeatureError,
    FeatureTable,
    FrameAnnotation,
    LightState,
    LightType,
    ObjectType,
    SemanticAction,
    SequenceSample,
    SignType,
    Track,
    TrafficObjectRecord,
    augment_actions,
    balanced_sampler,
    load_annotations,
    load_features,
    sample_event_to_crossing,
    sample_original,
    write_annotations,
    write_features,
)
from .metrics import (
    EvalRecord,
    MetricsReport,
    action_map,
    auc,
    delta_s,
    evaluate,
    thresholded_scores,
)
from .model import (
    AblationFlags,
    BehaviorModel,
    CheckpointError,
    ModelConfig,
    StepOutput,
    load_checkpoint,
    save_checkpoint,
)
from .relation import (
    RelationFeature,
    build_relation_feature,
    crosswalk_feature,
    ego_feature,
    neighbor_feature,
    soft_attend,
    station_feature,
    traffic_light_feature,
    traffic_sign_feature,
)
from .synthetic import GeneratorConfig, generate_synthetic
from .training import (
    Adam,
    DivergenceError,
    LossWeights,
    SequenceLabels,
    TrainConfig,
    TrainResult,
    desk_config,
    multitask_loss,
    omega1_schedule,
    train,
)

__version__ = "0.1.0"

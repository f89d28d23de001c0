"""Context-aware kernel networks over image cell grids.

Explicit kernel maps are propagated through a small stack of layers whose
mixing matrices live on a typed grid-neighborhood support (above, below,
left, right).  The final per-image pooled maps feed one-vs-rest hinge-loss
SVMs, and the mixing matrices are trained end-to-end against that loss by
alternating optimization.  Includes stationary (layer-shared) and classwise
(per-concept) variants, multi-label annotation metrics, and a config-driven
command line.
"""

from .config import RunConfig, apply_overrides, parse_config
from .context import (
    ClasswiseContext,
    ContextParams,
    backward,
    build_params,
    classwise_from_global,
    export_context,
    forward,
    forward_layer,
    gram_iterates,
    gram_recursion,
    import_context,
    map_dimension,
    max_gamma,
    normalized_context,
    relative_error,
)
from .data import (
    DIRECTIONS,
    Dataset,
    GridSpec,
    ImageSample,
    NeighborhoodSystem,
    build_neighborhood,
    load_dataset,
    read_feature_file,
    save_dataset,
    write_feature_file,
)
from .errors import (
    BadValue,
    CheckpointMismatch,
    ConfigError,
    CtxKernelError,
    DimensionMismatch,
    DivergenceDetected,
    LabelArity,
    MissingFile,
    NegativeInput,
    NoPositives,
    NonFinite,
    OutOfRange,
    ShapeMismatch,
    SingleClass,
    StateMismatch,
    UsageError,
)
from .featmap import InitMapKind, init_maps, map_hi, map_linear, map_poly2, resolve_hi_max
from .metrics import (
    CorelReport,
    ImageclefReport,
    average_precision,
    corel_metrics,
    evaluate,
    map_score,
    mf_scores,
)
from .svm import (
    EnsembleModel,
    SvmConfig,
    SvmModel,
    decision_scores,
    ensemble_scores,
    hinge_loss,
    load_ensembles,
    load_model,
    loss_gradient_wrt_maps,
    primal_from_dual,
    save_ensembles,
    save_model,
    train_dual,
    train_ensemble,
    train_multiclass,
)
from .trainer import (
    FeatureSpec,
    GradcheckReport,
    TrainConfig,
    TrainState,
    alternate,
    gradcheck,
    initial_maps,
    load_checkpoint,
    pooled_maps,
    save_checkpoint,
    state_scores,
    train,
    train_classwise,
    train_stationary,
)

__all__ = [
    "BadValue",
    "CheckpointMismatch",
    "ClasswiseContext",
    "ConfigError",
    "ContextParams",
    "CorelReport",
    "CtxKernelError",
    "DIRECTIONS",
    "Dataset",
    "DimensionMismatch",
    "DivergenceDetected",
    "EnsembleModel",
    "FeatureSpec",
    "GradcheckReport",
    "GridSpec",
    "ImageSample",
    "ImageclefReport",
    "InitMapKind",
    "LabelArity",
    "MissingFile",
    "NegativeInput",
    "NeighborhoodSystem",
    "NoPositives",
    "NonFinite",
    "OutOfRange",
    "RunConfig",
    "ShapeMismatch",
    "SingleClass",
    "StateMismatch",
    "SvmConfig",
    "SvmModel",
    "TrainConfig",
    "TrainState",
    "UsageError",
    "alternate",
    "apply_overrides",
    "average_precision",
    "backward",
    "build_neighborhood",
    "build_params",
    "classwise_from_global",
    "corel_metrics",
    "decision_scores",
    "ensemble_scores",
    "evaluate",
    "export_context",
    "forward",
    "forward_layer",
    "gradcheck",
    "gram_iterates",
    "gram_recursion",
    "hinge_loss",
    "import_context",
    "init_maps",
    "initial_maps",
    "load_checkpoint",
    "load_dataset",
    "load_ensembles",
    "load_model",
    "loss_gradient_wrt_maps",
    "map_dimension",
    "map_hi",
    "map_linear",
    "map_poly2",
    "map_score",
    "max_gamma",
    "mf_scores",
    "normalized_context",
    "parse_config",
    "pooled_maps",
    "primal_from_dual",
    "read_feature_file",
    "relative_error",
    "resolve_hi_max",
    "save_checkpoint",
    "save_dataset",
    "save_ensembles",
    "save_model",
    "state_scores",
    "train",
    "train_classwise",
    "train_dual",
    "train_ensemble",
    "train_multiclass",
    "train_stationary",
    "write_feature_file",
]

"""Modality-importance analysis and text-bias removal for multimodal intent datasets."""

from .ablation import (
    AblationRecord,
    ComboAnnotation,
    ComboStats,
    aggregate_stats,
    annotate_minimal,
    run_ablation,
    run_ablation_rotated,
)
from .data import (
    Dataset,
    Sample,
    Split,
    SplitSpec,
    apply_split,
    kshot_subset,
    load_dataset,
    save_dataset,
    split_from_samples,
    stratified_split,
)
from .debias import (
    DetectorConfig,
    ReductionReport,
    RoundRobinFolds,
    VoteRecord,
    build_debiased,
    build_folds,
    detect_bias,
    percent_reduction,
    random_control,
)
from .errors import DataError, ModbiasError, TrainingDivergedError
from .evaluate import (
    LabelMatch,
    Metrics,
    compare_runs,
    compute_metrics,
    match_label,
    render_comparison,
)
from .learner import (
    FeatureBlockLayout,
    FusionModel,
    TrainConfig,
    Vocabulary,
    build_vocab,
    featurize,
    featurize_all,
    mask_features,
    predict,
    predict_proba,
    tokenize,
    train,
)
from .modality import CANONICAL_COMBOS, Modality, ModalityCombo
from .router import (
    RouteClass,
    RouterConfig,
    RouterModel,
    route,
    route_target,
    route_targets,
    train_router,
)
from .synth import SynthConfig, SynthPlant, synth_generate

__version__ = "0.1.0"

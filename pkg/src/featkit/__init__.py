"""featkit: linear-SVM classification and spatial-search retrieval over
dense feature vectors, with the augmentation geometry and evaluation
metrics that go with them."""

from .augment import (
    AugmentConfig,
    TransformPlan,
    augment_training_set,
    augmentation_plans,
    crop_rects,
    enlarge_bbox,
    negative_expansion_plans,
    pool_responses,
    positive_mirror_plans,
)
from .extractors import (
    ExternalProcessExtractor,
    FileBackedExtractor,
    ToyPixelExtractor,
    external_protocol_roundtrip,
    extract,
)
from .features import (
    FeatureMatrix,
    PixelGrid,
    Rect,
    load_features,
    load_labels,
    load_pgm,
    save_features,
    save_labels,
    save_pgm,
    smallest_enclosing_square,
)
from .metrics import (
    average_precision,
    confusion,
    mean_ap,
    mean_diag_accuracy,
    pr_curve,
    recall_at_k,
)
from .preprocess import (
    PcaWhitenModel,
    PipelineConfig,
    l2_normalize,
    load_pca_model,
    pca_fit,
    pca_whiten_apply,
    retrieval_pipeline_apply,
    retrieval_pipeline_fit,
    save_pca_model,
    signed_power,
)
from .retrieval import (
    RetrievalIndex,
    SpatialSearchConfig,
    build_index,
    load_index,
    patch_grid,
    patch_to_ref_distance,
    query_distance,
    save_index,
    search,
)
from .svm import (
    BinaryModel,
    C_PRESETS,
    MulticlassModel,
    SolverConfig,
    decision,
    load_model,
    objective,
    ova_scores,
    predict_ovo,
    save_model,
    train_binary,
    train_one_vs_all,
    train_one_vs_one,
)

__version__ = "0.1.0"

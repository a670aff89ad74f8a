"""angiokit: rule-based lesion severity estimation from angiography masks,
the pyramidal augmentation scheme, and the detection/segmentation/agreement
evaluation stack."""

from .augment import (
    AugmentConfig,
    AugmentedSample,
    CompositeConfig,
    DynamicConfig,
    Provenance,
    StaticConfig,
    apply_dynamic,
    build_training_stream,
    mosaic,
    static_expand,
)
from .detect_eval import (
    EvalSummary,
    MatchOutcome,
    MldEvalResult,
    average_precision,
    ctp_analysis,
    ctp_flags,
    fitness,
    map_suite,
    match_at_iou,
    mld_match,
    mld_metrics,
    mld_metrics_from_counts,
)
from .geometry import (
    BinaryMask,
    BoundingBox,
    CropContext,
    DatasetManifest,
    Detection,
    GrayImage,
    ImageRecord,
    LesionAnnotation,
    Point,
    bbox_contains,
    bbox_iou,
    crop_resize,
    uncrop_point,
)
from .morphology import (
    DistanceMap,
    SkeletonPath,
    distance_transform,
    longest_path,
    skeletonize,
)
from .seg_eval import SegScore, cl_dice, mhd, pixel_metrics, score_pair
from .severity import (
    RadiusProfile,
    SeverityReport,
    detect_peaks,
    estimate_severity,
    radius_profile,
    severity_from_crop,
    severity_with_profile,
)
from .stats import (
    AgreementReport,
    BlandAltman,
    MannWhitneyResult,
    bland_altman,
    bootstrap_ci,
    mann_whitney_u,
    severity_agreement,
)

__version__ = "0.1.0"

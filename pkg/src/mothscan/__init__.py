"""mothscan: curvature-saliency detection and classification of trap insects."""

__version__ = "0.1.0"

from .clustering import (
    ContourCategory,
    ShapeFeatures,
    best_kmeans,
    categorize,
    elbow_select_k,
    kmeans,
    shape_features,
    zscore,
)
from .dataset import (
    PatchRecord,
    augment,
    augment_to_target,
    cross_validate,
    load_dataset,
    make_folds,
    plan_augmentation,
)
from .errors import DataError, DimensionError, ParameterError
from .hcs import HcsParams, compute_hcs, descriptor_len, normalize_patch
from .imaging import (
    Contour,
    CurvinessField,
    HessianField,
    curviness_saliency,
    extract_contours,
    gaussian_smooth,
    hessian,
    load_gray,
    multiscale_cs,
    principal_direction,
    save_gray,
)
from .pipeline import (
    Detection,
    DetectionCategory,
    DetectionResult,
    PipelineConfig,
    detect_image,
    render_overlay,
)
from .separation import (
    SeparationParams,
    dilate_contours,
    initial_regions,
    merge_regions,
    separate_touching,
    watershed,
)
from .svm import KernelSpec, SvmModel, load_model, poly_kernel, train

"""Content-based retrieval engine for grayscale lesion ROIs.

Pipeline: multiscale Hessian structure filtering, GeM-pooled L2-normalized
descriptors, optional margin-triplet embedding head, and exact cosine top-k
retrieval with clinical evaluation settings. ``service`` exposes it over
HTTP; ``cli`` from the command line.
"""

from .backend import active_backend, force_backend
from .imagecore import (
    AugmentSpec,
    BBox,
    ImageGrid,
    LesionRecord,
    Manifest,
    augment,
    crop_roi,
    decode_image,
    load_image,
    load_manifest,
    resize_bilinear,
)
from .frangi import (
    EigenTriple,
    FrangiParams,
    HessianField,
    ResponseMap,
    eigen_symmetric,
    frangi_filter,
    frangi_response,
    frangi_response_2d,
    gaussian_blur,
    hessian_at,
)
from .descriptor import (
    Descriptor,
    DescriptorConfig,
    FeatureMap,
    describe,
    describe_raw_pixels,
    feature_stack,
    gem_pool,
    l2_normalize,
)
from .metric import (
    EmbeddingHead,
    TrainConfig,
    Triplet,
    cosine_distance,
    cosine_similarity,
    embed,
    mine_triplets,
    train_head,
    triplet_loss,
    triplet_loss_grad,
)
from .retrieval import (
    EvalReport,
    Index,
    IndexEntry,
    RankedList,
    average_precision_at_k,
    build_index,
    classification_report,
    evaluate,
    knn_classify,
    precision_at_k,
    query,
)
from .service import RetrievalEngine, ServiceConfig, create_app

__version__ = "0.1.0"

__all__ = [
    "active_backend",
    "force_backend",
    "AugmentSpec",
    "BBox",
    "ImageGrid",
    "LesionRecord",
    "Manifest",
    "augment",
    "crop_roi",
    "decode_image",
    "load_image",
    "load_manifest",
    "resize_bilinear",
    "EigenTriple",
    "FrangiParams",
    "HessianField",
    "ResponseMap",
    "eigen_symmetric",
    "frangi_filter",
    "frangi_response",
    "frangi_response_2d",
    "gaussian_blur",
    "hessian_at",
    "Descriptor",
    "DescriptorConfig",
    "FeatureMap",
    "describe",
    "describe_raw_pixels",
    "feature_stack",
    "gem_pool",
    "l2_normalize",
    "EmbeddingHead",
    "TrainConfig",
    "Triplet",
    "cosine_distance",
    "cosine_similarity",
    "embed",
    "mine_triplets",
    "train_head",
    "triplet_loss",
    "triplet_loss_grad",
    "EvalReport",
    "Index",
    "IndexEntry",
    "RankedList",
    "average_precision_at_k",
    "build_index",
    "classification_report",
    "evaluate",
    "knn_classify",
    "precision_at_k",
    "query",
    "RetrievalEngine",
    "ServiceConfig",
    "create_app",
]

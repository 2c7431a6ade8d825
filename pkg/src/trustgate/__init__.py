"""trustgate: post-hoc reliability tooling for classifiers.

The package wraps an existing classifier's raw outputs with three
independent safeguards and the plumbing to serve them:

- split conformal prediction sets with a finite-sample coverage target,
- energy-based out-of-distribution detection with a calibrated threshold,
- long-tail diagnosis plus post-hoc recomposition of weak classifier rows,

backed by evaluation metrics, file/synthetic logit backends, a taxonomic
dataset ingestion tool, and an HTTP/CLI prediction service.
"""

from .conformal import (
    ConformalCalibration,
    CoverageReport,
    NonconformityScores,
    calibrate,
    evaluate_coverage,
    nonconformity_scores,
    predict_set,
    split_half,
)
from .core import (
    ClassIndexMap,
    LogitTable,
    ProbVector,
    Rank,
    TaxonRecord,
    Taxonomy,
    seeded_rng,
    softmax,
    softmax_matrix,
    top_k,
)
from .errors import (
    ConfigError,
    InsufficientDataError,
    InsufficientDonorsError,
    InvalidArgumentError,
    InvalidInputError,
    NotCalibratedError,
    NotFoundError,
    ParseError,
    TrustgateError,
)
from .longtail import (
    ClassifierHead,
    DeltaReport,
    FeatureTable,
    Split,
    SplitAssignment,
    assign_splits,
    diagnose_splits,
    evaluate_delta,
    nearest_strong,
    per_class_accuracy,
    recompose_head,
)
from .metrics import EvalReport, evaluate, histogram
from .ood import (
    EnergyConfig,
    OodVerdict,
    calibrate_threshold,
    detect,
    energy,
    energy_matrix,
    fit_config,
)
from .backend import (
    BackendDescriptor,
    BackendKind,
    SyntheticSpec,
    generate_synthetic,
    logits_from_features,
    synthetic_means,
)
from .service import (
    Bundle,
    ClassPrediction,
    PredictionReport,
    build_app,
    load_bundle,
    predict_pipeline,
    report_json,
)

__version__ = "0.1.0"

__all__ = [
    "BackendDescriptor",
    "BackendKind",
    "Bundle",
    "ClassIndexMap",
    "ClassPrediction",
    "ClassifierHead",
    "ConfigError",
    "ConformalCalibration",
    "CoverageReport",
    "DeltaReport",
    "EnergyConfig",
    "EvalReport",
    "FeatureTable",
    "InsufficientDataError",
    "InsufficientDonorsError",
    "InvalidArgumentError",
    "InvalidInputError",
    "LogitTable",
    "NonconformityScores",
    "NotCalibratedError",
    "NotFoundError",
    "OodVerdict",
    "ParseError",
    "PredictionReport",
    "ProbVector",
    "Rank",
    "Split",
    "SplitAssignment",
    "SyntheticSpec",
    "TaxonRecord",
    "Taxonomy",
    "TrustgateError",
    "assign_splits",
    "build_app",
    "calibrate",
    "calibrate_threshold",
    "detect",
    "diagnose_splits",
    "energy",
    "energy_matrix",
    "evaluate",
    "evaluate_coverage",
    "evaluate_delta",
    "fit_config",
    "generate_synthetic",
    "histogram",
    "load_bundle",
    "logits_from_features",
    "nearest_strong",
    "nonconformity_scores",
    "per_class_accuracy",
    "predict_pipeline",
    "predict_set",
    "recompose_head",
    "report_json",
    "seeded_rng",
    "softmax",
    "softmax_matrix",
    "split_half",
    "synthetic_means",
    "top_k",
]

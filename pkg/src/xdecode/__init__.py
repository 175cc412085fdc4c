"""Cross-domain brain decoding with domain adaptation for linear classifiers."""

from .adaptation import METHODS, AdaptedModel, DomainPair, ImportanceWeights, adapt
from .dataset import SubjectDataset, read_bundle, read_volumes, write_bundle, write_volumes
from .errors import (
    BundleError,
    ConvergenceError,
    DegenerateDataError,
    DivergenceError,
    InvalidArgumentError,
    SingularSystemError,
    UndefinedMetricError,
    XDecodeError,
)
from .experiment import CompareConfig, run_compare_experiment
from .linear import FitConfig, LinearClassifier, balanced_accuracy, fit_logistic, predict, weighted_empirical_risk
from .partitioning import PartitionPlan, TrialTable, make_partition, make_plan_grid
from .searchlight import ScoreMap, SearchlightConfig, center_scores, run_searchlight
from .synth import SynthConfig, generate_synth
from .volume import BrainMask, SphereNeighborhood, VoxelGrid, extract_sphere_features, sphere_centers, sphere_offsets

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "AdaptedModel",
    "BrainMask",
    "BundleError",
    "CompareConfig",
    "ConvergenceError",
    "DegenerateDataError",
    "DivergenceError",
    "DomainPair",
    "FitConfig",
    "ImportanceWeights",
    "InvalidArgumentError",
    "LinearClassifier",
    "PartitionPlan",
    "ScoreMap",
    "SearchlightConfig",
    "SingularSystemError",
    "SphereNeighborhood",
    "SubjectDataset",
    "SynthConfig",
    "TrialTable",
    "UndefinedMetricError",
    "VoxelGrid",
    "XDecodeError",
    "adapt",
    "balanced_accuracy",
    "center_scores",
    "extract_sphere_features",
    "fit_logistic",
    "generate_synth",
    "make_partition",
    "make_plan_grid",
    "predict",
    "read_bundle",
    "read_volumes",
    "run_compare_experiment",
    "run_searchlight",
    "sphere_centers",
    "sphere_offsets",
    "weighted_empirical_risk",
    "write_bundle",
    "write_volumes",
]

"""Rank-based method comparison and voxelwise permutation inference."""

from .inference import (
    PValueMap,
    VarianceSmoother,
    per_subject_permutation_test,
    sign_flip_permutation_test,
    sign_flips,
    smoothed_one_sample_t,
)
from .ranks import (
    RankSummary,
    ResultsTable,
    bonferroni_posthoc,
    friedman_aligned_ranks,
    rank_summary,
    shaffer_adjust,
    shaffer_multipliers,
    shaffer_posthoc,
    significance_frequency_table,
    write_rank_summary,
)
from .tfce import TfceConfig, TfceOperator, tfce_enhance

__all__ = [
    "PValueMap",
    "RankSummary",
    "ResultsTable",
    "TfceConfig",
    "TfceOperator",
    "VarianceSmoother",
    "bonferroni_posthoc",
    "friedman_aligned_ranks",
    "per_subject_permutation_test",
    "rank_summary",
    "shaffer_adjust",
    "shaffer_multipliers",
    "shaffer_posthoc",
    "sign_flip_permutation_test",
    "sign_flips",
    "significance_frequency_table",
    "smoothed_one_sample_t",
    "tfce_enhance",
    "write_rank_summary",
]

"""Batch conformal p-values and FDR-controlled distribution-shift detection."""

from ._core import (
    __version__,
    batch_detect,
    batch_pvalue,
    bh_procedure,
    log_binom,
    multiquantile_pvalue,
    permutation_pvalue,
    rank_weights,
    ranksum_pvalue,
    run_simulation,
    scaled_rank,
    subsampling_pvalue,
    ttest_pvalue,
    two_quantile_weights,
    ztest_pvalue,
)

__all__ = [
    "__version__",
    "batch_detect",
    "batch_pvalue",
    "bh_procedure",
    "log_binom",
    "multiquantile_pvalue",
    "permutation_pvalue",
    "rank_weights",
    "ranksum_pvalue",
    "run_simulation",
    "scaled_rank",
    "subsampling_pvalue",
    "ttest_pvalue",
    "two_quantile_weights",
    "ztest_pvalue",
]

"""Tests for equality of two paired correlation matrices."""

from .core import (DegenerateDependenceError, FisherDomainError, PairedDataset, PairIndexSet,
                   compute_differences, fisher_transform, pearson_correlations, psi_cross,
                   standardized_differences)
from .inference import Regime, TestSpec, run_tests
from .nulls import (ExceedanceNull, GumbelNull, SquaresNull, empirical_pvalue, exceedance_moments,
                    exceedance_null, exceedance_pvalue, gumbel_pvalue, gumbel_quantile,
                    squares_pvalue)
from .permutation import estimate_null_parameters, paired_permute, permutation_stats
from .power import (GammaPrior, h1_truncated_moments, power_bound_exceed, power_bound_max,
                    power_bound_squares, select_threshold)
from .stats import ExceedanceConfig, StatKind, compute_statistic

__all__ = [
    "DegenerateDependenceError", "FisherDomainError", "PairedDataset", "PairIndexSet",
    "compute_differences", "fisher_transform", "pearson_correlations", "psi_cross",
    "standardized_differences", "Regime", "TestSpec", "run_tests", "ExceedanceNull", "GumbelNull",
    "SquaresNull", "empirical_pvalue", "exceedance_moments", "exceedance_null", "exceedance_pvalue",
    "gumbel_pvalue", "gumbel_quantile", "squares_pvalue", "estimate_null_parameters",
    "paired_permute", "permutation_stats", "GammaPrior", "h1_truncated_moments",
    "power_bound_exceed", "power_bound_max", "power_bound_squares", "select_threshold",
    "ExceedanceConfig", "StatKind", "compute_statistic",
]

"""Small weighted coresets and mergeable streaming sketches for sums of functions."""

from .coreset import (WeightedCoreset, build_coreset, coreset_evaluate, erm_transfer_check,
                      halve, random_sample_coreset)
from .discrepancy import (SignAssignment, assign_signs, empirical_discrepancy, exhaustive_signs,
                          gram_certificate, greedy_kernel_signs, sorted_quantile_signs)
from .families import (DomainError, FunctionFamily, QuerySet, evaluate, prepare_points,
                       sample_queries, sum_evaluate)
from .streaming import (Budget, CompactorStack, SketchSummary, budget_for, finalize, merge, push)

__version__ = "0.1.0"

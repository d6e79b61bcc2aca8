"""Permutation FANOVA with interval localization and closed pairwise comparisons."""

__version__ = "0.1.0"

from .closure import (  # noqa: E402
    ClosureReport,
    PairwiseReport,
    combined_shortcut,
    full_closure,
    pairwise_followup,
    shortcut_p_ordered,
    shortcut_stat_ordered,
)
from .curves import (  # noqa: E402
    BSplineBasis,
    FunctionalDataset,
    RawCurve,
    SmoothedCurve,
    build_basis,
    evaluate_on_grid,
    fit_curve,
    group_means,
    load_dataset,
    select_lambda_gcv,
    smooth_dataset,
)
from .errors import DegenerateStatisticError, FanovaError, SingularFitError, ValidationError  # noqa: E402
from .permute import NullStatMatrix, PermutationPlan, generate_plan, null_matrix, p_value  # noqa: E402
from .stats import (  # noqa: E402
    IntervalPartition,
    combine_sum,
    functional_F,
    integrate,
    interval_T,
    vn_stat,
)

__all__ = [
    "BSplineBasis",
    "ClosureReport",
    "DegenerateStatisticError",
    "FanovaError",
    "FunctionalDataset",
    "IntervalPartition",
    "NullStatMatrix",
    "PairwiseReport",
    "PermutationPlan",
    "RawCurve",
    "SingularFitError",
    "SmoothedCurve",
    "ValidationError",
    "build_basis",
    "combine_sum",
    "combined_shortcut",
    "evaluate_on_grid",
    "fit_curve",
    "full_closure",
    "functional_F",
    "generate_plan",
    "group_means",
    "integrate",
    "interval_T",
    "load_dataset",
    "null_matrix",
    "p_value",
    "pairwise_followup",
    "select_lambda_gcv",
    "shortcut_p_ordered",
    "shortcut_stat_ordered",
    "smooth_dataset",
    "vn_stat",
]

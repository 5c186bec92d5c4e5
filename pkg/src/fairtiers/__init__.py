"""Post-processing fairness correction for risk-tier classifiers.

Given a scored binary-classification dataset with a protected group label,
this package finds group-specific risk-tier thresholds by penalized
constrained optimization under a chosen group-level fairness definition,
and audits the fairness-accuracy trade-off across a penalty-weight sweep.
"""

from .data import (
    ConfigError,
    DataError,
    Dataset,
    EmptyInputError,
    MergeEvent,
    RowError,
    SampleRecord,
    SchemaError,
    Subsample,
    SyntheticGroup,
    UnknownGroupError,
    UnmergeableError,
    assign_tier,
    draw_subsample,
    generate_synthetic,
    load_dataset,
    merge_small_groups,
    save_dataset,
    whole_sample,
)
from .metrics import (
    ConfusionCounts,
    FairnessDefinition,
    FairnessMeasure,
    PerformanceVector,
    calibration_measure,
    check_impossibility,
    confusion,
    delta_changed,
    delta_changed_tiers,
    fairness_measure,
    fairness_measure_from_rates,
    pairwise_ratio,
    performance,
)
from .optimizer import (
    AgnosticTiers,
    DegenerateScoresError,
    InfeasibleTierError,
    ObjectiveValue,
    agnostic_tiers,
    candidate_cuts,
    objective,
    optimize_calibration,
    optimize_thresholds,
    optimize_tier,
)
from .pipeline import (
    AuditReport,
    CorrectionConfig,
    CorrectionEntry,
    EvaluationEntry,
    GuardViolationError,
    SelectionError,
    SweepResult,
    audit,
    evaluate,
    run_correction,
    select_best_w,
    sweep,
)
from .thresholds import TIER_LABELS, TIERS, ThresholdMatrix

__version__ = "0.1.0"

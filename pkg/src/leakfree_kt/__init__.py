"""Leakage-free knowledge tracing: expansion, mask-label models, fair evaluation and leakage audits."""

from .data import (
    Dataset,
    DatasetStats,
    Interaction,
    InteractionLog,
    KCMapping,
    SplitPlan,
    compute_stats,
    corr_transform,
    generate_synthetic,
    load_dataset,
    split_dataset,
)
from .expansion import MASK, expand, fairness_check, plan_windows, window

__version__ = "0.1.0"

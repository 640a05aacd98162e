"""Multi-head linear forecasting for multivariate time series.

Variates are grouped by absolute Pearson correlation (complete-linkage
agglomeration under an angle threshold), each group gets its own linear
forecasting head, and heads train on an error-scaled weighted MSE with
analytic gradients.
"""

from .data import (NormStats, Normalizer, SeriesFrame, WindowBatch, count_windows,
                   fit_normalizer, load_csv, windows)
from .diagnostics import (ConflictLedger, GradErrorTrace, conflict_flags,
                          correlation_vs_conflict_report, count_conflicts,
                          per_variate_gradients,
                          per_variate_gradients_from_parts)
from .estimator import MTLinearForecaster
from .evaluation import (MetricRecord, SweepResult, compare_table, evaluate,
                         horizon_sweep, improvement_pct, render_comparison)
from .grouping import (SimilarityMatrix, VariateGrouping, cluster,
                       correlation_matrix, grouping_report)
from .heads import (HeadEnsemble, LinearHead, forward, forward_batch, init_head,
                    load_checkpoint, save_checkpoint)
from .loss import (ErrorMatrix, PenaltyWeights, analytic_gradient, error_matrix,
                   head_lipschitz, lipschitz_bound, penalty_weights,
                   unweighted_mse, weighted_loss)
from .trainer import (GridSearchResult, HeadTrainState, TrainConfig, TrainResult,
                      grid_search, train, train_step)

__version__ = "0.1.0"

__all__ = [
    "SeriesFrame", "WindowBatch", "Normalizer", "NormStats", "load_csv",
    "fit_normalizer", "windows", "count_windows",
    "SimilarityMatrix", "VariateGrouping", "correlation_matrix", "cluster",
    "grouping_report",
    "LinearHead", "HeadEnsemble", "init_head", "forward", "forward_batch",
    "save_checkpoint", "load_checkpoint",
    "ErrorMatrix", "PenaltyWeights", "penalty_weights", "weighted_loss",
    "unweighted_mse", "analytic_gradient", "lipschitz_bound", "head_lipschitz",
    "error_matrix",
    "TrainConfig", "TrainResult", "HeadTrainState", "train", "train_step",
    "grid_search", "GridSearchResult",
    "ConflictLedger", "GradErrorTrace", "per_variate_gradients",
    "per_variate_gradients_from_parts",
    "count_conflicts", "conflict_flags", "correlation_vs_conflict_report",
    "MetricRecord", "SweepResult", "evaluate", "horizon_sweep", "compare_table",
    "improvement_pct", "render_comparison",
    "MTLinearForecaster",
]

"""Metrics, degradations, the synthetic splicing benchmark and the robustness grid."""
from .metrics import (PrecisionRecall, UndefinedMetricError, angular_error, best_mcc_over_thresholds,
                      confusion_counts, mcc, mcc_detail, precision_recall_at, roc_auc, tpr_at_far)
from .degradation import JPEG_QUALITIES, RESIZE_FACTORS, VARIANTS, DegradationSpec, degrade, variant
from .benchmark import SplicedItem, build_spliced_dataset, read_spliced_dataset, write_spliced_dataset
from .evaluation import EvalReport, evaluate_items
from .robustness import RobustnessGrid, robustness_grid, sample_pairs

//! Detection quality and performance-versus-cost analysis.

mod correlation;
mod detection;
mod perfcost;

pub use correlation::{correlations, kendall_tau_b, pearson, spearman, CorrelationEntry};
pub use detection::{
    average_precision, average_precision_frames, iou, mean_ap, EvalFrame, MapSummary,
    IOU_THRESHOLDS,
};
pub use perfcost::{ParResult, PerfCostCurve};

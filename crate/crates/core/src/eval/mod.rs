//! Group metrics, evaluation runs and the CSV report.

mod metrics;
mod report;
mod run;

pub use metrics::{
    accuracy, compute_metrics, group_accuracies, is_majority_prediction, is_minority_prediction,
    minority_majority_accuracy, worst_group_accuracy, Metric, PredictionTriplet,
};
pub use report::{aggregate_seeds, population_std, EvalReport, ReportRow};
pub use run::{evaluate_baseline, evaluate_icl, select_baseline, BaselineMethod, LengthTriplets};
